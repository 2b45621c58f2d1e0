"""Passivity checks for the coupled impedance and the Z-width boundary.

Three independent routes decide whether a controller is acceptable:

* pole locations of ``Z(s)`` (stability),
* a frequency sweep of ``Re Z(jw)`` (positive-realness),
* the closed-form damping/stiffness inequality
  ``B_y^2 D + K_y (J P - D^2 k_r) > 0`` used as the optimizer constraint.

Note that the closed-form inequality is the ``w^2`` coefficient of the
numerator of ``Re Z(jw)`` only. The constant term ``K_y (D K_y - P^2 k_r)``
is negative for ``K_y < P^2 k_r / D``, so the sweep can report a negative
real part at low frequency even when the inequality holds.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from numpy.polynomial import polynomial as npoly

from .model import (
    POLE_TOLERANCE,
    ImpedanceGains,
    PoleAtFrequency,
    SystemParams,
    evaluate_tf,
    impedance_tf,
    quadratic_roots,
)

PASSIVITY_TOLERANCE = 1e-9
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class GridTooCoarse(RuntimeError):
    """Golden-section refinement of the sweep minimum did not converge."""


class EmptyTrace(ValueError):
    pass


@dataclass(frozen=True)
class FrequencyGrid:
    omega_min: float = 1e-3
    omega_max: float = 1e5
    n_points: int = 2000

    def __post_init__(self):
        if not (0 < self.omega_min < self.omega_max):
            raise ValueError("need 0 < omega_min < omega_max")
        if self.n_points < 3:
            raise ValueError("need at least 3 grid points")

    def points(self) -> np.ndarray:
        return np.logspace(np.log10(self.omega_min), np.log10(self.omega_max), self.n_points)


@dataclass(frozen=True)
class SweepResult:
    positive_real: bool
    worst_frequency: float
    worst_real_part: float
    grid_min_real_part: float


@dataclass(frozen=True)
class PassivityVerdict:
    stable: bool
    sufficient_criterion: bool
    positive_real: bool | None = None
    worst_frequency: float | None = None
    worst_real_part: float | None = None

    @property
    def constraint_satisfied(self) -> bool:
        """The optimizer constraint: stability and the closed-form inequality."""
        return self.stable and self.sufficient_criterion


@dataclass(frozen=True)
class ZWidthCurve:
    stiffness: np.ndarray
    damping: np.ndarray

    def __post_init__(self):
        if len(self.stiffness) != len(self.damping):
            raise ValueError("stiffness and damping samples differ in length")
        if np.any(np.diff(self.stiffness) <= 0):
            raise ValueError("stiffness samples must be strictly increasing")

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["K_y", "B_y_boundary"])
            for k, b in zip(self.stiffness, self.damping):
                writer.writerow([repr(float(k)), repr(float(b))])
        return path

    @classmethod
    def from_csv(cls, path: str | Path) -> "ZWidthCurve":
        with Path(path).open() as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            np.array([float(r["K_y"]) for r in rows]),
            np.array([float(r["B_y_boundary"]) for r in rows]),
        )


def impedance_poles(params: SystemParams, gains: ImpedanceGains) -> list[complex]:
    """``[0, s2, s3]`` with ``s2,3`` the roots of ``D k_r s^2 + (B_y + P k_r) s + K_y``."""
    s2, s3 = quadratic_roots(
        params.D * params.k_r, gains.B_y + params.P * params.k_r, gains.K_y
    )
    return [0j, s2, s3]


def stability_condition(params: SystemParams, gains: ImpedanceGains) -> bool:
    _, s2, s3 = impedance_poles(params, gains)
    # simple origin pole: neither quadratic root may sit at s = 0
    return s2.real < 0 and s3.real < 0 and s2 != 0 and s3 != 0


def sufficient_margin(params: SystemParams, gains: ImpedanceGains) -> Fraction:
    """Exact value of ``B_y^2 D + K_y (J P - D^2 k_r)`` for the given floats."""
    J, P, D, k_r = (Fraction(v) for v in (params.J, params.P, params.D, params.k_r))
    B, K = Fraction(gains.B_y), Fraction(gains.K_y)
    return B * B * D + K * (J * P - D * D * k_r)


def sufficient_criterion(params: SystemParams, gains: ImpedanceGains) -> bool:
    return sufficient_margin(params, gains) > 0


def _real_part(tf, omega: float) -> float | None:
    try:
        return evaluate_tf(tf, omega).real
    except PoleAtFrequency:
        return None


def _golden_min(f, lo: float, hi: float, max_iter: int = 100, tol: float = 1e-12):
    """Minimize ``f`` on ``[lo, hi]`` (log-frequency coordinates)."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            x = 0.5 * (a + b)
            return x, f(x)
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    raise GridTooCoarse(f"refinement did not converge on [{math.exp(lo)}, {math.exp(hi)}]")


def positive_real_sweep(
    params: SystemParams,
    gains: ImpedanceGains,
    grid: FrequencyGrid = FrequencyGrid(),
    tolerance: float = PASSIVITY_TOLERANCE,
) -> SweepResult:
    """Scan ``Re Z(jw)`` on a log grid, then refine the minimum by golden section."""
    tf = impedance_tf(params, gains)
    omegas = grid.points()
    s = 1j * omegas
    den = npoly.polyval(s, tf.den)
    bad = np.abs(den) < POLE_TOLERANCE
    kept = list(omegas[~bad])
    values = list((npoly.polyval(s[~bad], tf.num) / den[~bad]).real)
    for i in np.flatnonzero(bad):
        # skip the pole, probe just either side of it instead
        w = omegas[i]
        lo = omegas[i - 1] if i > 0 else w / 1.01
        hi = omegas[i + 1] if i + 1 < len(omegas) else w * 1.01
        for probe in (math.sqrt(lo * w), math.sqrt(w * hi)):
            re = _real_part(tf, probe)
            if re is not None:
                kept.append(probe)
                values.append(re)
    if not values:
        raise GridTooCoarse("no evaluable grid point")
    order = np.argsort(kept)
    kept = [kept[j] for j in order]
    arr = np.asarray(values)[order]
    i = int(np.argmin(arr))
    grid_min = float(arr[i])

    lo = math.log(kept[max(i - 1, 0)])
    hi = math.log(kept[min(i + 1, len(kept) - 1)])

    def f(logw: float) -> float:
        re = _real_part(tf, math.exp(logw))
        return math.inf if re is None else re

    worst_w, worst_re = kept[i], grid_min
    if hi > lo:
        logw, re = _golden_min(f, lo, hi)
        if re < worst_re:
            worst_w, worst_re = math.exp(logw), re
    return SweepResult(
        positive_real=worst_re >= -tolerance,
        worst_frequency=float(worst_w),
        worst_real_part=float(worst_re),
        grid_min_real_part=grid_min,
    )


def z_width_boundary(
    params: SystemParams,
    k_min: float,
    k_max: float,
    n: int = 200,
    spacing: str = "linear",
) -> ZWidthCurve:
    """Minimal damping ``B_y`` per stiffness ``K_y`` satisfying the closed-form inequality."""
    if not (0 < k_min < k_max):
        raise ValueError("need 0 < k_min < k_max")
    if n < 2:
        raise ValueError("need n >= 2")
    if spacing == "log":
        k = np.logspace(np.log10(k_min), np.log10(k_max), n)
    else:
        k = np.linspace(k_min, k_max, n)
    return ZWidthCurve(k, boundary_damping(params, k))


def boundary_damping(params: SystemParams, stiffness):
    """``sqrt(K_y (D^2 k_r - J P) / D)``, or 0 where the whole quadrant is passive."""
    excess = params.D**2 * params.k_r - params.J * params.P
    k = np.asarray(stiffness, dtype=float)
    if excess <= 0:
        out = np.zeros_like(k)
    else:
        out = np.sqrt(k * excess / params.D)
    return out if out.ndim else float(out)


def is_passive(
    params: SystemParams,
    gains: ImpedanceGains,
    sweep: bool = True,
    grid: FrequencyGrid = FrequencyGrid(),
) -> PassivityVerdict:
    stable = stability_condition(params, gains)
    sufficient = sufficient_criterion(params, gains)
    if not sweep:
        return PassivityVerdict(stable, sufficient)
    res = positive_real_sweep(params, gains, grid)
    return PassivityVerdict(stable, sufficient, res.positive_real, res.worst_frequency, res.worst_real_part)


def energy_observer(trace) -> tuple[np.ndarray, float]:
    """Cumulative port energy ``E(t) = int tau_e qdot dt`` and ``beta_hat = max(0, -min E)``.

    ``trace`` needs a uniform ``dt`` plus synchronized ``tau_e`` and ``qdot`` arrays.
    """
    tau = np.asarray(trace.tau_e, dtype=float)
    qdot = np.asarray(trace.qdot, dtype=float)
    if tau.size == 0:
        raise EmptyTrace("trace has no samples")
    if tau.shape != qdot.shape:
        raise ValueError("tau_e and qdot channels differ in length")
    power = tau * qdot
    energy = np.zeros_like(power)
    energy[1:] = np.cumsum(0.5 * (power[1:] + power[:-1]) * trace.dt)
    return energy, float(max(0.0, -energy.min()))
