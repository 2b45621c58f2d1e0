"""Experiment configuration: TOML in, validated frozen dataclasses out.

Every problem found in a file is collected and reported together, so a
user fixing a config sees the whole list at once.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
import zlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..model import BENCHMARK_GAINS, ImpedanceGains, SystemParams
from ..optimizer import OptimizerConfig
from ..passivity import impedance_poles
from ..simulator import HumanModel, PenaltyFitness, TaskSpec

DEFAULT_CONFIG = Path(__file__).with_name("default.toml")

# One distinctly stiff wrist and two similar compliant ones.
SUBJECT_PROFILES: dict[str, HumanModel] = {
    "subject1": HumanModel(stiffness=20.0, damping=0.5, intent_gain=8.0, reaction_delay=0.1,
                           noise_amplitude=0.02),
    "subject2": HumanModel(stiffness=5.0, damping=0.3, intent_gain=8.0, reaction_delay=0.1,
                           noise_amplitude=0.02),
    "subject3": HumanModel(stiffness=6.0, damping=0.25, intent_gain=7.0, reaction_delay=0.12,
                           noise_amplitude=0.02),
}


class ParseError(ValueError):
    def __init__(self, path, line: int | None, column: int | None, message: str):
        self.path, self.line, self.column = path, line, column
        where = f"{path}:{line}:{column}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")


class ValidationError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class SimulationConfig:
    dt: float = 1e-3
    penalty_tau_rms: float = 10.0
    penalty_t_total: float = 60.0
    workers: int = 1

    @property
    def penalty(self) -> PenaltyFitness:
        return PenaltyFitness(self.penalty_tau_rms, self.penalty_t_total)


@dataclass(frozen=True)
class AnalysisConfig:
    stiffness_range: tuple[float, float] = (1.0, 500.0)
    samples: int = 200
    spacing: str = "linear"
    # extra (P, D) sets drawn next to the configured system
    comparison: tuple[tuple[float, float], ...] = ((40.0, 0.5), (20.0, 0.7))
    gains: tuple[tuple[float, float], ...] = ((50.0, 100.0), (0.1, 100.0), (5.0, 1.0))
    sweep: bool = True


@dataclass(frozen=True)
class BenchConfig:
    gains: tuple[float, float] = (BENCHMARK_GAINS.B_y, BENCHMARK_GAINS.K_y)
    movements: int = 10

    @property
    def impedance(self) -> ImpedanceGains:
        return ImpedanceGains(*self.gains)


@dataclass(frozen=True)
class ExportConfig:
    clip: float = 4.0
    trace_generations: str = "first_last"


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemParams = SystemParams()
    subjects: tuple[str, ...] = tuple(SUBJECT_PROFILES)
    humans: tuple[tuple[str, HumanModel], ...] = tuple(SUBJECT_PROFILES.items())
    task: TaskSpec = TaskSpec()
    optimizer: OptimizerConfig = OptimizerConfig()
    simulation: SimulationConfig = SimulationConfig()
    analysis: AnalysisConfig = AnalysisConfig()
    bench: BenchConfig = BenchConfig()
    export: ExportConfig = ExportConfig()
    output_dir: str = "runs/default"
    seed: int = 2024

    def human(self, name: str) -> HumanModel:
        return dict(self.humans)[name]

    def subject_seed(self, name: str) -> int:
        """Reproducible seed per subject, independent of the subject order."""
        if name not in self.subjects:
            raise KeyError(name)
        key = zlib.crc32(name.encode())
        return int(np.random.SeedSequence([self.seed, key]).generate_state(1)[0])

    def optimizer_for(self, name: str, constrained: bool) -> OptimizerConfig:
        return replace(self.optimizer, seed=self.subject_seed(name), constrained=constrained)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["humans"] = {name: dataclasses.asdict(h) for name, h in self.humans}
        return d


def config_hash(config: ExperimentConfig) -> str:
    """sha256 of the canonical JSON form; the output directory is excluded."""
    d = config.to_dict()
    d.pop("output_dir")
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(blob.encode()).hexdigest()


# --- parsing --------------------------------------------------------------------

_SECTION_TYPES = {
    "system": SystemParams,
    "task": TaskSpec,
    "simulation": SimulationConfig,
    "analysis": AnalysisConfig,
    "bench": BenchConfig,
    "export": ExportConfig,
}
_REQUIRED = {"optimizer": ("B_y_bounds", "K_y_bounds")}
_TOP_LEVEL = {"seed", "output_dir", "system", "human", "task", "optimizer", "simulation",
              "analysis", "bench", "export"}


def _field_names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_types(section: str, data: dict, cls, errors: list[str]) -> dict:
    """Keep known keys whose value has the default's type; report the rest."""
    defaults = {f.name: f.default for f in fields(cls)}
    out = {}
    for key, value in data.items():
        where = f"{section}.{key}"
        if key not in defaults:
            errors.append(f"{where}: unknown key")
            continue
        ref = defaults[key]
        if isinstance(ref, bool):
            ok = isinstance(value, bool)
        elif isinstance(ref, int):
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif isinstance(ref, float):
            ok = _is_number(value)
        elif isinstance(ref, str):
            ok = isinstance(value, str)
        elif isinstance(ref, tuple):
            ok = isinstance(value, list)
        else:
            ok = True
        if not ok:
            errors.append(f"{where}: expected {type(ref).__name__}, got {type(value).__name__}")
            continue
        out[key] = float(value) if isinstance(ref, float) else value
    return out


def _pair(where: str, value, errors: list[str], positive: bool = True) -> tuple[float, float] | None:
    if not (isinstance(value, list) and len(value) == 2 and all(_is_number(v) for v in value)):
        errors.append(f"{where}: expected a [lo, hi] pair of numbers, got {value!r}")
        return None
    lo, hi = float(value[0]), float(value[1])
    if positive and not (0 < lo < hi):
        errors.append(f"{where}: need 0 < lo < hi, got [{lo}, {hi}]")
        return None
    return lo, hi


def _build(section: str, cls, kwargs: dict, errors: list[str]):
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        errors.append(f"{section}: {exc}")
        return None


def _system(data: dict, errors: list[str]) -> SystemParams | None:
    kw = _check_types("system", data, SystemParams, errors)
    bad = False
    for key, value in kw.items():
        if not value > 0:
            errors.append(f"system.{key}: must be > 0, got {value}")
            bad = True
    return None if bad else _build("system", SystemParams, kw, errors)


def _humans(data: dict, errors: list[str]) -> tuple[tuple[str, ...], tuple[tuple[str, HumanModel], ...]]:
    profiles = dict(SUBJECT_PROFILES)
    for key in set(data) - {"subjects", "profiles", "overrides"}:
        errors.append(f"human.{key}: unknown key")
    for name, spec in data.get("profiles", {}).items():
        if not isinstance(spec, dict):
            errors.append(f"human.profiles.{name}: expected a table")
            continue
        base = profiles.get(name, HumanModel())
        kw = _check_types(f"human.profiles.{name}", spec, HumanModel, errors)
        h = _build(f"human.profiles.{name}", lambda **k: replace(base, **k), kw, errors)
        if h is not None:
            profiles[name] = h
    subjects = data.get("subjects", list(SUBJECT_PROFILES))
    if not (isinstance(subjects, list) and subjects and all(isinstance(s, str) for s in subjects)):
        errors.append("human.subjects: expected a non-empty list of profile names")
        subjects = []
    for name in subjects:
        if name not in profiles:
            errors.append(f"human.subjects: unknown profile {name!r} (known: {sorted(profiles)})")
    if len(set(subjects)) != len(subjects):
        errors.append("human.subjects: duplicate profile names")
    overrides = _check_types("human.overrides", data.get("overrides", {}), HumanModel, errors)
    resolved = []
    for name in subjects:
        if name in profiles:
            h = _build(f"human.overrides ({name})", lambda **k: replace(profiles[name], **k),
                       overrides, errors)
            if h is not None:
                resolved.append((name, h))
    return tuple(subjects), tuple(resolved)


def _optimizer(data: dict, errors: list[str]) -> OptimizerConfig | None:
    for key in _REQUIRED["optimizer"]:
        if key not in data:
            errors.append(f"optimizer.{key}: missing (the search box must be explicit)")
    if "seed" in data:
        errors.append("optimizer.seed: set the top-level seed instead")
        data = {k: v for k, v in data.items() if k != "seed"}
    kw = _check_types("optimizer", data, OptimizerConfig, errors)
    for key in _REQUIRED["optimizer"]:
        if key in kw:
            pair = _pair(f"optimizer.{key}", kw[key], errors)
            if pair is None:
                return None
            kw[key] = pair
    if any(key not in kw for key in _REQUIRED["optimizer"]):
        return None
    try:
        return OptimizerConfig(**kw)
    except ValueError:
        errors.extend(f"optimizer: {p}" for p in _optimizer_problems(kw))
        return None


def _optimizer_problems(kw: dict) -> list[str]:
    """Problems of an OptimizerConfig built from ``kw`` without raising."""
    probe = object.__new__(OptimizerConfig)
    for f in fields(OptimizerConfig):
        object.__setattr__(probe, f.name, kw.get(f.name, f.default))
    return probe.problems()


def _analysis(data: dict, errors: list[str]) -> AnalysisConfig | None:
    kw = _check_types("analysis", data, AnalysisConfig, errors)
    ok = True
    if "stiffness_range" in kw:
        pair = _pair("analysis.stiffness_range", kw["stiffness_range"], errors)
        ok &= pair is not None
        kw["stiffness_range"] = pair
    for key in ("comparison", "gains"):
        if key in kw:
            pairs = []
            for i, item in enumerate(kw[key]):
                pair = _pair(f"analysis.{key}[{i}]", item, errors, positive=False)
                if pair is not None and not (pair[0] > 0 and pair[1] > 0):
                    errors.append(f"analysis.{key}[{i}]: entries must be > 0")
                    pair = None
                ok &= pair is not None
                pairs.append(pair)
            kw[key] = tuple(pairs)
    if kw.get("samples", 2) < 2:
        errors.append("analysis.samples: need >= 2")
        ok = False
    if kw.get("spacing", "linear") not in ("linear", "log"):
        errors.append("analysis.spacing: must be 'linear' or 'log'")
        ok = False
    if len(kw.get("comparison", ())) > 3:
        errors.append("analysis.comparison: at most 3 comparison sets")
        ok = False
    return AnalysisConfig(**kw) if ok else None


def _simple(section: str, data: dict, errors: list[str]):
    cls = _SECTION_TYPES[section]
    kw = _check_types(section, data, cls, errors)
    if section == "bench" and "gains" in kw:
        pair = _pair("bench.gains", kw["gains"], errors, positive=False)
        if pair is None or not (pair[0] > 0 and pair[1] > 0):
            if pair is not None:
                errors.append("bench.gains: entries must be > 0")
            return None
        kw["gains"] = pair
    if section == "simulation":
        for key in ("dt", "penalty_tau_rms", "penalty_t_total"):
            if key in kw and not kw[key] > 0:
                errors.append(f"simulation.{key}: must be > 0")
                return None
        if kw.get("workers", 1) < 1:
            errors.append("simulation.workers: must be >= 1")
            return None
    if section == "bench" and kw.get("movements", 1) < 1:
        errors.append("bench.movements: must be >= 1")
        return None
    if section == "export":
        if "clip" in kw and not kw["clip"] > 0:
            errors.append("export.clip: must be > 0")
            return None
        if kw.get("trace_generations", "first_last") not in ("first_last", "all", "none"):
            errors.append("export.trace_generations: must be 'first_last', 'all' or 'none'")
            return None
    return _build(section, cls, kw, errors)


def smallest_time_constant(system: SystemParams, gains: list[ImpedanceGains]) -> float:
    """Fastest closed-loop time constant ``1/max|Re s|`` over the given gains."""
    rates = [abs(p.real) for g in gains for p in impedance_poles(system, g) if p != 0]
    return 1.0 / max(rates)


def _step_size_rule(cfg: ExperimentConfig, errors: list[str]) -> None:
    b, k = cfg.optimizer.B_y_bounds, cfg.optimizer.K_y_bounds
    corners = [ImpedanceGains(x, y) for x in b for y in k]
    tau_min = smallest_time_constant(cfg.system, [cfg.bench.impedance, *corners])
    limit = 2.0 * tau_min / 10.0
    if cfg.simulation.dt > limit:
        errors.append(
            f"simulation.dt: {cfg.simulation.dt} s violates the step-size rule "
            f"dt <= 2*tau_min/10 = {limit:.3g} s (tau_min = {tau_min:.3g} s over the benchmark "
            f"gains and search-box corners)"
        )


def config_from_dict(data: dict[str, Any]) -> ExperimentConfig:
    errors: list[str] = []
    for key in set(data) - _TOP_LEVEL:
        errors.append(f"{key}: unknown key")
    kw: dict[str, Any] = {}
    if "seed" in data:
        if isinstance(data["seed"], int) and not isinstance(data["seed"], bool) and data["seed"] >= 0:
            kw["seed"] = data["seed"]
        else:
            errors.append(f"seed: expected a non-negative integer, got {data['seed']!r}")
    if "output_dir" in data:
        if isinstance(data["output_dir"], str):
            kw["output_dir"] = data["output_dir"]
        else:
            errors.append("output_dir: expected a string")
    sections = {}
    for name in ("system", "human", "task", "optimizer", "simulation", "analysis", "bench", "export"):
        value = data.get(name, {})
        if not isinstance(value, dict):
            errors.append(f"{name}: expected a table")
            value = {}
        sections[name] = value
    if "optimizer" not in data:
        errors.append("optimizer: missing section (B_y_bounds and K_y_bounds are required)")
    built = {
        "system": _system(sections["system"], errors),
        "task": _build("task", TaskSpec,
                       _check_types("task", sections["task"], TaskSpec, errors), errors),
        "optimizer": _optimizer(sections["optimizer"], errors) if "optimizer" in data else None,
        "analysis": _analysis(sections["analysis"], errors),
    }
    for name in ("simulation", "bench", "export"):
        built[name] = _simple(name, sections[name], errors)
    subjects, humans = _humans(sections["human"], errors)
    if errors or any(v is None for v in built.values()):
        raise ValidationError(errors or ["configuration incomplete"])
    cfg = ExperimentConfig(subjects=subjects, humans=humans, **built, **kw)
    _step_size_rule(cfg, errors)
    if errors:
        raise ValidationError(errors)
    return cfg


def load_config(path: str | Path | None = None) -> ExperimentConfig:
    """Parse and validate a TOML experiment file (the shipped default if ``None``)."""
    path = Path(path) if path is not None else DEFAULT_CONFIG
    text = path.read_text()
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        msg = getattr(exc, "msg", str(exc))
        raise ParseError(path, getattr(exc, "lineno", None), getattr(exc, "colno", None), msg) from exc
    return config_from_dict(data)
