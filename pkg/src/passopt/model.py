"""Linear closed-loop model of the one-DOF admittance-controlled handler.

Polynomials are dense coefficient tuples in *ascending* powers of ``s``
(index ``i`` multiplies ``s**i``), matching ``numpy.polynomial.polynomial``.

Sign convention: ``tau_e`` is the torque the user applies to the handler, so
the port impedance is ``Z(s) = tau_e(s) / (s q(s))``. This is the negated
reaction torque that appears as ``-tau_e`` in the usual block diagram, which
leaves ``Z`` itself unchanged.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

POLE_TOLERANCE = 1e-12


class PoleAtFrequency(ValueError):
    """The denominator vanishes (numerically) at the requested frequency."""


@dataclass(frozen=True)
class SystemParams:
    """Plant inertia ``J`` [kg m^2], gear ratio ``k_r``, PD gains ``P``, ``D`` (pre-gear)."""

    J: float = 0.005
    k_r: float = 3.5
    P: float = 20.0
    D: float = 0.5

    def __post_init__(self):
        for name in ("J", "k_r", "P", "D"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"SystemParams.{name} must be finite and > 0, got {value!r}")


@dataclass(frozen=True)
class ImpedanceGains:
    """One individual ``Z = [B_y, K_y]``: admittance damping and stiffness."""

    B_y: float
    K_y: float

    def __post_init__(self):
        for name in ("B_y", "K_y"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"ImpedanceGains.{name} must be finite and > 0, got {value!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.B_y, self.K_y])


BENCHMARK_GAINS = ImpedanceGains(B_y=50.0, K_y=100.0)


def _trim(coeffs: Sequence[float]) -> tuple[float, ...]:
    out = [float(c) for c in coeffs]
    while len(out) > 1 and out[-1] == 0.0:
        out.pop()
    return tuple(out) if out else (0.0,)


def _horner(coeffs: Sequence[float], s):
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * s + c
    return acc


@dataclass(frozen=True)
class RationalTransferFunction:
    """Ratio of real polynomials in ``s``; coefficients in ascending powers."""

    num: tuple[float, ...]
    den: tuple[float, ...]

    def __init__(self, num: Sequence[float], den: Sequence[float]):
        num_t, den_t = _trim(num), _trim(den)
        if all(c == 0.0 for c in den_t):
            raise ValueError("denominator is the zero polynomial")
        if not all(np.isfinite(num_t)) or not all(np.isfinite(den_t)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "num", num_t)
        object.__setattr__(self, "den", den_t)

    @property
    def num_degree(self) -> int:
        return len(self.num) - 1

    @property
    def den_degree(self) -> int:
        return len(self.den) - 1

    def __call__(self, s):
        """Evaluate at (possibly complex, possibly array-valued) ``s``."""
        if np.ndim(s):
            s = np.asarray(s)
            return npoly.polyval(s, self.num) / npoly.polyval(s, self.den)
        return _horner(self.num, s) / _horner(self.den, s)

    def __mul__(self, other: "RationalTransferFunction | float") -> "RationalTransferFunction":
        other = _as_tf(other)
        return RationalTransferFunction(
            npoly.polymul(self.num, other.num), npoly.polymul(self.den, other.den)
        )

    __rmul__ = __mul__

    def __add__(self, other: "RationalTransferFunction | float") -> "RationalTransferFunction":
        other = _as_tf(other)
        return RationalTransferFunction(
            npoly.polyadd(npoly.polymul(self.num, other.den), npoly.polymul(other.num, self.den)),
            npoly.polymul(self.den, other.den),
        )

    __radd__ = __add__

    def __truediv__(self, other: "RationalTransferFunction | float") -> "RationalTransferFunction":
        other = _as_tf(other)
        return RationalTransferFunction(
            npoly.polymul(self.num, other.den), npoly.polymul(self.den, other.num)
        )

    def __rtruediv__(self, other: float) -> "RationalTransferFunction":
        return _as_tf(other) / self

    def dc_gain(self) -> float:
        """Limit at ``s -> 0``; ``inf`` for a pole at the origin."""
        num, den = list(self.num), list(self.den)
        # strip common factors of s
        while len(num) > 1 and len(den) > 1 and num[0] == 0.0 and den[0] == 0.0:
            num.pop(0)
            den.pop(0)
        if den[0] == 0.0:
            return float("inf") if num[0] != 0.0 else float("nan")
        return num[0] / den[0]

    def poles(self) -> np.ndarray:
        return npoly.polyroots(self.den) if self.den_degree > 0 else np.array([], dtype=complex)


def _as_tf(value) -> RationalTransferFunction:
    if isinstance(value, RationalTransferFunction):
        return value
    return RationalTransferFunction([float(value)], [1.0])


S = RationalTransferFunction([0.0, 1.0], [1.0])


@dataclass(frozen=True)
class ComplexResponse:
    frequency: float
    value: complex

    def __post_init__(self):
        if self.frequency < 0:
            raise ValueError("frequency must be >= 0")

    @property
    def real(self) -> float:
        return self.value.real

    @property
    def imag(self) -> float:
        return self.value.imag


def evaluate_tf(tf: RationalTransferFunction, frequency: float) -> ComplexResponse:
    """Evaluate ``tf(j*frequency)`` by Horner's rule."""
    s = 1j * frequency
    den = _horner(tf.den, s)
    if abs(den) < POLE_TOLERANCE:
        raise PoleAtFrequency(f"denominator vanishes at omega={frequency!r} rad/s")
    return ComplexResponse(float(abs(frequency)), complex(_horner(tf.num, s) / den))


def plant_tf(params: SystemParams) -> RationalTransferFunction:
    """Handler ``G(s) = 1 / (J s^2)``."""
    return RationalTransferFunction([1.0], [0.0, 0.0, params.J])


def position_controller_tf(params: SystemParams) -> RationalTransferFunction:
    """PD position loop through the gearbox: ``C(s) = (D s + P) k_r``."""
    return RationalTransferFunction([params.P * params.k_r, params.D * params.k_r], [1.0])


def admittance_filter_tf(gains: ImpedanceGains) -> RationalTransferFunction:
    """Internal admittance filter state ``x / tau_e = 1 / (B_y s + K_y)``.

    The reference correction fed to the position loop is ``q_Y = dx/dt``,
    i.e. ``admittance_tf = s * admittance_filter_tf``.
    """
    return RationalTransferFunction([1.0], [gains.K_y, gains.B_y])


def admittance_tf(gains: ImpedanceGains) -> RationalTransferFunction:
    """``Y(s) = s / (B_y s + K_y)``, the correction path that closes to the impedance below."""
    return RationalTransferFunction([0.0, 1.0], [gains.K_y, gains.B_y])


def impedance_tf(params: SystemParams, gains: ImpedanceGains) -> RationalTransferFunction:
    """Coupled port impedance

        Z(s) = [J s^2 + (D s + P) k_r] (B_y s + K_y) / (s [D k_r s^2 + (B_y + P k_r) s + K_y])
    """
    J, k_r, P, D = params.J, params.k_r, params.P, params.D
    B, K = gains.B_y, gains.K_y
    num = npoly.polymul([P * k_r, D * k_r, J], [K, B])
    den = [0.0, K, B + P * k_r, D * k_r]
    return RationalTransferFunction(num, den)


def closed_loop_position_tf(
    params: SystemParams, gains: ImpedanceGains
) -> tuple[RationalTransferFunction, RationalTransferFunction]:
    """Return ``(q/q_d, q/tau_e)`` assembled from the block diagram.

    ``q/q_d = GC / (1 + GC)`` and ``q/tau_e = G (1 + C Y) / (1 + GC)``. No
    pole/zero cancellation is attempted.
    """
    G = plant_tf(params)
    C = position_controller_tf(params)
    Y = admittance_tf(gains)
    GC = G * C
    loop = 1.0 + GC
    return GC / loop, G * (1.0 + C * Y) / loop


def impedance_from_block_diagram(params: SystemParams, gains: ImpedanceGains) -> RationalTransferFunction:
    """``Z = tau_e / (s q)`` built from ``closed_loop_position_tf`` (uncancelled)."""
    _, compliance = closed_loop_position_tf(params, gains)
    return 1.0 / (S * compliance)


def quadratic_roots(a: float, b: float, c: float) -> tuple[complex, complex]:
    """Roots ``((-b + sqrt(disc)) / 2a, (-b - sqrt(disc)) / 2a)`` of ``a s^2 + b s + c``.

    Real roots are computed without catastrophic cancellation.
    """
    disc = cmath.sqrt(b * b - 4.0 * a * c)
    if disc.imag == 0.0 and disc.real != 0.0 and b != 0.0:
        d = disc.real
        if b > 0:
            q = -0.5 * (b + d)
            return complex(c / q), complex(q / a)
        q = -0.5 * (b - d)
        return complex(q / a), complex(c / q)
    return (-b + disc) / (2.0 * a), (-b - disc) / (2.0 * a)
