"""Fixed-step simulation of the admittance loop coupled to a simulated wrist.

Realization
-----------
The admittance filter state ``x`` obeys ``B_y dx/dt + K_y x = tau_e`` and the
position reference is shifted by ``q_Y = dx/dt``. The PD loop then drives the
handler with ``tau_M = k_r (D (dq_Y/dt - dq/dt) + P (q_Y - q))``. Because
``dq_Y/dt`` contains the torque rate, the plant is integrated in the
generalized momentum ``p = J dq/dt - k_r D q_Y``:

    dq/dt = (p + k_r D q_Y) / J
    dp/dt = -k_r D dq/dt + k_r P (q_Y - q) + tau_e
    dx/dt = q_Y = (tau_e - K_y x) / B_y

which has exactly the port impedance ``impedance_tf`` and needs no derivative
of the measured torque.

Wrist model
-----------
``tau_e = sat(K_h (r - q) - B_h dq/dt + n(t))``: intrinsic stiffness and
damping about a voluntary reference ``r``. The reference integrates the
delayed target error, ``dr/dt = intent_gain (target - q(t - delay))``, and
stops integrating while the torque is saturated in the same direction.
Velocity depends on ``tau_e`` instantaneously, and the unsaturated solve is
linear, so the saturated solution is the clipped linear one.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .model import ImpedanceGains, SystemParams

BLOWUP_LIMIT = 1e6
NOISE_KNOT_SPACING = 0.05
TRACE_COLUMNS = ("t", "q", "qdot", "tau_e", "tau_M", "q_Y", "target", "dwell_flag")


class NumericalBlowup(RuntimeError):
    """State left the plausible range: the coupled loop is unstable."""


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class HumanModel:
    """Spring-damper wrist with a slow voluntary reference.

    ``intent_gain`` [1/s] sets how fast the voluntary reference chases the
    target error; the other fields are in SI units.
    """

    stiffness: float = 5.0
    damping: float = 0.3
    intent_gain: float = 8.0
    torque_saturation: float = 10.0
    reaction_delay: float = 0.1
    noise_amplitude: float = 0.0

    def __post_init__(self):
        if self.stiffness < 0 or self.damping < 0:
            raise ValueError("wrist stiffness and damping must be >= 0")
        if self.intent_gain < 0:
            raise ValueError("intent_gain must be >= 0")
        if not self.torque_saturation > 0:
            raise ValueError("torque_saturation must be > 0")
        if self.reaction_delay < 0:
            raise ValueError("reaction_delay must be >= 0")
        if self.noise_amplitude < 0:
            raise ValueError("noise_amplitude must be >= 0")


@dataclass(frozen=True)
class TaskSpec:
    amplitude: float = 0.1
    dwell_time: float = 2.0
    tolerance: float = 0.01
    movements: int = 2
    timeout: float = 15.0

    def __post_init__(self):
        if not (self.amplitude > 0 and self.dwell_time > 0 and self.tolerance > 0):
            raise ValueError("amplitude, dwell_time and tolerance must be > 0")
        if self.movements < 1:
            raise ValueError("movements must be >= 1")
        if not self.timeout > self.dwell_time:
            raise ValueError("timeout must exceed dwell_time")


@dataclass(frozen=True)
class SimulationState:
    t: float = 0.0
    q: float = 0.0
    momentum: float = 0.0  # J qdot - k_r D q_Y
    filter_x: float = 0.0
    human_ref: float = 0.0
    qdot: float = 0.0
    tau_e: float = 0.0
    tau_m: float = 0.0
    q_y: float = 0.0

    @property
    def delta_q(self) -> float:
        """Tracked reference; the nominal set point is zero."""
        return self.q_y

    @property
    def e_q(self) -> float:
        return self.delta_q - self.q


@dataclass(frozen=True)
class FitnessVector:
    tau_rms: float
    t_total: float
    feasible: bool = True

    def __post_init__(self):
        if self.tau_rms < 0 or not self.t_total > 0:
            raise ValueError("need tau_rms >= 0 and t_total > 0")

    def as_tuple(self) -> tuple[float, float]:
        return (self.tau_rms, self.t_total)


@dataclass
class SimulationTrace:
    dt: float
    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    tau_e: np.ndarray
    tau_M: np.ndarray
    q_Y: np.ndarray
    target: np.ndarray
    dwell_flag: np.ndarray
    final_state: "SimulationState | None" = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        n = len(self.t)
        for name in TRACE_COLUMNS[1:]:
            if len(getattr(self, name)) != n:
                raise ValueError(f"channel {name} has length {len(getattr(self, name))}, expected {n}")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def e_q(self) -> np.ndarray:
        return self.q_Y - self.q

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            cols = [getattr(self, c) for c in TRACE_COLUMNS]
            for row in zip(*cols):
                writer.writerow([repr(float(v)) for v in row[:-1]] + [int(row[-1])])
        return path

    @classmethod
    def from_csv(cls, path: str | Path) -> "SimulationTrace":
        data = np.genfromtxt(path, delimiter=",", names=True)
        data = np.atleast_1d(data)
        t = data["t"]
        dt = float(t[1] - t[0]) if len(t) > 1 else 0.0
        return cls(
            dt=dt,
            **{c: data[c] for c in TRACE_COLUMNS if c != "dwell_flag"},
            dwell_flag=data["dwell_flag"].astype(bool),
        )

    @classmethod
    def concatenate(cls, traces: Sequence["SimulationTrace"]) -> "SimulationTrace":
        """Join traces end to end on one continuous, uniform time axis."""
        if not traces:
            raise EmptyInput("no traces to join")
        dt = traces[0].dt
        parts = {c: [] for c in TRACE_COLUMNS}
        offset = 0.0
        for tr in traces:
            if not math.isclose(tr.dt, dt):
                raise ValueError("traces have different time steps")
            for c in TRACE_COLUMNS[1:]:
                parts[c].append(getattr(tr, c))
            parts["t"].append(tr.t - tr.t[0] + offset)
            offset += len(tr) * dt
        return cls(dt=dt, **{c: np.concatenate(v) for c, v in parts.items()})


class SmoothNoise:
    """Gaussian samples on a fixed knot grid, linearly interpolated.

    The knot spacing is independent of the integration step, so refining
    ``dt`` does not change the disturbance.
    """

    def __init__(self, amplitude: float, duration: float, rng: np.random.Generator,
                 spacing: float = NOISE_KNOT_SPACING):
        self.amplitude = amplitude
        self.spacing = spacing
        n = int(math.ceil(duration / spacing)) + 2
        self.knots = amplitude * rng.standard_normal(n) if amplitude > 0 else np.zeros(n)

    def __call__(self, t: float) -> float:
        if self.amplitude == 0.0:
            return 0.0
        u = t / self.spacing
        i = int(u)
        if i >= len(self.knots) - 1:
            return float(self.knots[-1])
        frac = u - i
        return float(self.knots[i] * (1.0 - frac) + self.knots[i + 1] * frac)


TorqueLaw = Callable[[float, float, float, float, float], float]


def _human_law(human: HumanModel, noise: Callable[[float], float] | None) -> TorqueLaw:
    K_h, B_h, sat = human.stiffness, human.damping, human.torque_saturation

    def law(t, q, r, alpha, beta):
        n = noise(t) if noise is not None else 0.0
        tau = (K_h * (r - q) - B_h * alpha + n) / (1.0 + B_h * beta)
        if tau > sat:
            return sat
        if tau < -sat:
            return -sat
        return tau

    return law


def _rhs(q, p, x, r, t, law, q_del, target, intent, sat, J, kD, kP, B, K):
    """State derivatives plus the interaction torque and reference correction."""
    c = kD / B
    alpha = (p - c * K * x) / J
    beta = c / J
    tau = law(t, q, r, alpha, beta)
    q_y = (tau - K * x) / B
    qdot = (p + kD * q_y) / J
    pdot = -kD * qdot + kP * (q_y - q) + tau
    if intent:
        err = target - (q if q_del is None else q_del)
        # conditional integration: hold the reference while saturated toward the target
        if (tau >= sat and err > 0) or (tau <= -sat and err < 0):
            rdot = 0.0
        else:
            rdot = intent * err
    else:
        rdot = 0.0
    return qdot, pdot, q_y, rdot, tau


def _advance(state: SimulationState, params: SystemParams, gains: ImpedanceGains, law: TorqueLaw,
             dt: float, target: float = 0.0, intent: float = 0.0, sat: float = math.inf,
             q_delayed: float | None = None) -> SimulationState:
    J, kD, kP = params.J, params.k_r * params.D, params.k_r * params.P
    B, K = gains.B_y, gains.K_y
    t, q, p, x, r = state.t, state.q, state.momentum, state.filter_x, state.human_ref
    args = (law, q_delayed, target, intent, sat, J, kD, kP, B, K)
    h = 0.5 * dt

    k1 = _rhs(q, p, x, r, t, *args)
    k2 = _rhs(q + h * k1[0], p + h * k1[1], x + h * k1[2], r + h * k1[3], t + h, *args)
    k3 = _rhs(q + h * k2[0], p + h * k2[1], x + h * k2[2], r + h * k2[3], t + h, *args)
    k4 = _rhs(q + dt * k3[0], p + dt * k3[1], x + dt * k3[2], r + dt * k3[3], t + dt, *args)
    w = dt / 6.0
    q1 = q + w * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    p1 = p + w * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    x1 = x + w * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    r1 = r + w * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
    t1 = t + dt

    qdot1, _, q_y1, _, tau1 = _rhs(q1, p1, x1, r1, t1, *args)
    if not (abs(q1) <= BLOWUP_LIMIT and abs(qdot1) <= BLOWUP_LIMIT):
        raise NumericalBlowup(f"|q|={abs(q1):.3g}, |qdot|={abs(qdot1):.3g} at t={t1:.3f}s")
    # torque-rate term of the D action by backward difference (reporting only)
    q_y_rate = (q_y1 - state.q_y) / dt
    tau_m = kD * (q_y_rate - qdot1) + kP * (q_y1 - q1)
    return SimulationState(t1, q1, p1, x1, r1, qdot1, tau1, tau_m, q_y1)


def _with_outputs(state: SimulationState, params: SystemParams, gains: ImpedanceGains,
                  law: TorqueLaw, target: float, human: HumanModel) -> SimulationState:
    """Fill the algebraic outputs (velocity, torque, correction) of ``state``."""
    qdot, _, q_y, _, tau = _rhs(state.q, state.momentum, state.filter_x, state.human_ref, state.t,
                                law, None, target, 0.0, human.torque_saturation,
                                params.J, params.k_r * params.D, params.k_r * params.P,
                                gains.B_y, gains.K_y)
    return replace(state, qdot=qdot, tau_e=tau, q_y=q_y)


def initial_state(params: SystemParams, gains: ImpedanceGains, q: float = 0.0, t: float = 0.0,
                  human_ref: float | None = None) -> SimulationState:
    """Rest state at angle ``q`` with the admittance filter relaxed.

    The handler only rests at ``q`` with zero torque when ``q = 0``; elsewhere
    the supplied reference lets a wrist hold it.
    """
    return SimulationState(t=t, q=q, human_ref=q if human_ref is None else human_ref)


def step(state: SimulationState, params: SystemParams, gains: ImpedanceGains, human: HumanModel,
         target: float, dt: float, *, q_delayed: float | None = None,
         noise: Callable[[float], float] | None = None) -> SimulationState:
    """One RK4 step of the coupled loop.

    ``q_delayed`` is the handler angle the wrist perceives (held over the
    step); ``None`` means no reaction delay.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    return _advance(state, params, gains, _human_law(human, noise), dt, target,
                    human.intent_gain, human.torque_saturation, q_delayed)


def step_driven(state: SimulationState, params: SystemParams, gains: ImpedanceGains,
                torque: Callable[[float], float], dt: float) -> SimulationState:
    """One RK4 step with a prescribed interaction torque (wrist bypassed)."""

    def law(t, q, r, alpha, beta):
        return torque(t)

    return _advance(state, params, gains, law, dt)


def simulate_driven(params: SystemParams, gains: ImpedanceGains, torque: Callable[[float], float],
                    duration: float, dt: float) -> SimulationTrace:
    """Open-port response of the admittance loop to an exogenous torque history."""
    n = int(round(duration / dt))
    tau0 = torque(0.0)
    q_y0 = tau0 / gains.B_y
    state = SimulationState(tau_e=tau0, q_y=q_y0, qdot=params.k_r * params.D * q_y0 / params.J)
    rec = _Recorder(dt)
    rec.add(state, 0.0, False)
    for _ in range(n):
        state = step_driven(state, params, gains, torque, dt)
        rec.add(state, 0.0, False)
    return rec.trace(state)


class _Recorder:
    def __init__(self, dt: float):
        self.dt = dt
        self.rows: list[tuple] = []

    def add(self, s: SimulationState, target: float, dwell: bool):
        self.rows.append((s.t, s.q, s.qdot, s.tau_e, s.tau_m, s.q_y, target, dwell))

    def trace(self, final_state: SimulationState | None = None) -> SimulationTrace:
        arr = np.array(self.rows, dtype=float).reshape(-1, len(TRACE_COLUMNS))
        cols = {c: arr[:, i].copy() for i, c in enumerate(TRACE_COLUMNS)}
        cols["dwell_flag"] = cols["dwell_flag"].astype(bool)
        return SimulationTrace(dt=self.dt, final_state=final_state, **cols)


def run_movement(initial: SimulationState, target: float, params: SystemParams, gains: ImpedanceGains,
                 human: HumanModel, task: TaskSpec, dt: float,
                 noise: Callable[[float], float] | None = None) -> tuple[SimulationTrace, float, bool]:
    """Reach ``target`` and hold it inside the tolerance band for the dwell time.

    Returns the trace, the movement time (dwell completion, or the timeout)
    and whether the dwell completed.
    """
    dwell_steps = int(round(task.dwell_time / dt))
    max_steps = int(round(task.timeout / dt))
    delay_steps = int(round(human.reaction_delay / dt))
    law = _human_law(human, noise)

    state = _with_outputs(initial, params, gains, law, target, human)
    history = [state.q]
    rec = _Recorder(dt)
    in_band = abs(state.q - target) <= task.tolerance
    streak = 1 if in_band else 0
    rec.add(state, target, in_band)
    # the initial sample already counts toward the dwell when inside the band
    for k in range(1, max_steps + 1):
        q_del = history[max(0, len(history) - 1 - delay_steps)] if delay_steps else None
        state = _advance(state, params, gains, law, dt, target, human.intent_gain,
                         human.torque_saturation, q_del)
        history.append(state.q)
        in_band = abs(state.q - target) <= task.tolerance
        streak = streak + 1 if in_band else 0
        rec.add(state, target, in_band)
        if streak > dwell_steps:
            return rec.trace(state), k * dt, True
    return rec.trace(state), max_steps * dt, False


def movement_targets(task: TaskSpec) -> list[float]:
    """Alternating flexion (+amplitude) and extension (-amplitude) targets."""
    return [task.amplitude if i % 2 == 0 else -task.amplitude for i in range(task.movements)]


@dataclass(frozen=True)
class PenaltyFitness:
    tau_rms: float = 10.0
    t_total: float = 60.0


def run_trial(params: SystemParams, gains: ImpedanceGains, human: HumanModel, task: TaskSpec,
              dt: float, seed: int | np.random.SeedSequence | None = 0,
              penalty: PenaltyFitness = PenaltyFitness()) -> tuple[list[SimulationTrace], FitnessVector]:
    """Run the alternating movements of one trial and score them.

    Every movement starts with the wrist relaxed in the neutral posture, so
    flexion and extension from the same controller are exact mirror images
    when the noise is off.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = ss.spawn(task.movements)
    traces: list[SimulationTrace] = []
    times: list[float] = []
    completed_all = True
    t0 = 0.0
    try:
        for target, child in zip(movement_targets(task), streams):
            noise = SmoothNoise(human.noise_amplitude, task.timeout + 1.0, np.random.default_rng(child))
            start = initial_state(params, gains, t=t0)
            trace, duration, completed = run_movement(start, target, params, gains, human, task, dt,
                                                      _shifted(noise, t0))
            traces.append(trace)
            times.append(duration)
            completed_all &= completed
            t0 = float(trace.t[-1] + dt)
    except NumericalBlowup:
        return traces, FitnessVector(penalty.tau_rms, penalty.t_total, feasible=False)
    rms = tau_rms(traces)
    if not np.isfinite(rms):
        return traces, FitnessVector(penalty.tau_rms, penalty.t_total, feasible=False)
    return traces, FitnessVector(min(rms, penalty.tau_rms), float(np.mean(times)), completed_all)


def tau_rms(traces: Sequence[SimulationTrace]) -> float:
    """RMS interaction torque over every sample of every movement."""
    if not traces:
        raise EmptyInput("no traces given")
    torque = np.concatenate([np.asarray(tr.tau_e, dtype=float) for tr in traces])
    return float(np.sqrt(np.mean(torque**2)))


def _shifted(noise: SmoothNoise, t0: float) -> Callable[[float], float]:
    if noise.amplitude == 0.0:
        return None
    return lambda t: noise(t - t0)


def torque_profile_stats(traces: Sequence[SimulationTrace], clip: float = 4.0,
                         sign_by_target: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pointwise mean and population deviation of ``tau_e`` aligned at movement start.

    Profiles are clipped to ``clip`` seconds, or to the shortest trace if
    that is shorter. With ``sign_by_target`` each profile is multiplied by the
    sign of its target so flexion and extension overlay.
    Returns ``(time, mean, deviation)``.
    """
    if not traces:
        raise EmptyInput("no traces given")
    if not clip > 0:
        raise ValueError("clip must be > 0")
    dt = traces[0].dt
    n = min(min(len(tr) for tr in traces), int(round(clip / dt)) + 1)
    rows = []
    for tr in traces:
        prof = np.asarray(tr.tau_e[:n], dtype=float)
        if sign_by_target:
            prof = prof * (np.sign(tr.target[0]) or 1.0)
        rows.append(prof)
    stack = np.vstack(rows)
    return np.arange(n) * dt, stack.mean(axis=0), stack.std(axis=0)
