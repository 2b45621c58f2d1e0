"""The four experiment commands: analyze, bench, optimize, export-profiles.

Run directory layout (``out`` below)::

    out/config.json
    out/analyze/zwidth_P<P>_D<D>.csv, verdicts.csv
    out/bench/<subject>/trace_mNN.csv, out/bench/metrics.csv, out/bench/summary.json
    out/<protocol>/<subject>/generations.csv, evaluations.csv, front.csv,
        zwidth_overlay.csv, checkpoints/gen_NN.json, traces/genNN_indNN_mNN.csv
    out/<protocol>/metrics.csv, out/<protocol>/summary.json
    out/profiles/<protocol>_<stage>_<subject>.csv

``<protocol>`` is ``constrained`` or ``unconstrained``.
"""

from __future__ import annotations

import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from ..model import ImpedanceGains, SystemParams
from ..optimizer import (
    Evaluator,
    GenerationRecord,
    Individual,
    OptimizationState,
    evaluation_seed,
    run_optimization,
)
from ..passivity import is_passive, sufficient_margin, z_width_boundary
from ..simulator import (
    FitnessVector,
    HumanModel,
    PenaltyFitness,
    SimulationTrace,
    TaskSpec,
    run_trial,
    torque_profile_stats,
)
from .config import ExperimentConfig, config_hash
from .io import (
    read_json,
    read_rows,
    write_evaluations,
    write_front,
    write_generations,
    write_json,
    write_rows,
)

METRIC_COLUMNS = ("subject", "stage", "tau_rms", "t_total")
VERDICT_COLUMNS = ("B_y", "K_y", "stable", "margin", "sufficient", "positive_real",
                   "worst_frequency", "worst_real_part")


class CheckpointMismatch(RuntimeError):
    pass


class MissingTraces(FileNotFoundError):
    pass


@dataclass
class RunSummary:
    """Per-run metric rows plus the per-subject optimization history.

    ``averaged`` is always derived from ``rows`` restricted to ``headline``.
    """

    protocol: str
    headline: str
    rows: list[dict] = field(default_factory=list)
    generations: dict[str, list[dict]] = field(default_factory=dict)
    fronts: dict[str, list[dict]] = field(default_factory=dict)
    failed: dict[str, str] = field(default_factory=dict)
    config_hash: str = ""

    def averaged(self, stage: str | None = None) -> dict[str, tuple[float, float]]:
        stage = stage or self.headline
        sel = [r for r in self.rows if r["stage"] == stage]
        out = {}
        for key in ("tau_rms", "t_total"):
            vals = np.array([r[key] for r in sel], dtype=float)
            out[key] = (float(vals.mean()), float(vals.std())) if vals.size else (float("nan"),) * 2
        return out

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "headline": self.headline,
            "averaged": {k: list(v) for k, v in self.averaged().items()},
            "rows": self.rows,
            "generations": self.generations,
            "fronts": self.fronts,
            "failed": self.failed,
            "config_hash": self.config_hash,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunSummary":
        return cls(d["protocol"], d["headline"], d["rows"], d["generations"], d["fronts"],
                   d["failed"], d["config_hash"])


@dataclass(frozen=True)
class AnalysisReport:
    curves: dict[str, Path]
    verdicts: list[dict]


@dataclass(frozen=True)
class TrialEvaluator:
    """Evaluator backed by the simulator (picklable for process pools)."""

    params: SystemParams
    human: HumanModel
    task: TaskSpec
    dt: float
    penalty: PenaltyFitness

    def __call__(self, gains: ImpedanceGains, seed) -> FitnessVector:
        return run_trial(self.params, gains, self.human, self.task, self.dt, seed, self.penalty)[1]

    def traces(self, gains: ImpedanceGains, seed) -> list[SimulationTrace]:
        return run_trial(self.params, gains, self.human, self.task, self.dt, seed, self.penalty)[0]


def movement_time(trace: SimulationTrace) -> float:
    return (len(trace) - 1) * trace.dt


def _rms(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.mean(x * x)))


def _label(P: float, D: float) -> str:
    return f"P{P:g}_D{D:g}"


def snapshot(config: ExperimentConfig, out: Path) -> None:
    write_json(out / "config.json", {"config_hash": config_hash(config), **config.to_dict()})


# --- analyze --------------------------------------------------------------------

def cmd_analyze(config: ExperimentConfig, out: str | Path) -> AnalysisReport:
    """Z-width boundaries for the system and comparison gain sets, plus verdicts."""
    out = Path(out) / "analyze"
    a = config.analysis
    sets = [(config.system.P, config.system.D), *a.comparison]
    curves = {}
    for P, D in sets:
        params = replace(config.system, P=P, D=D)
        curve = z_width_boundary(params, *a.stiffness_range, n=a.samples, spacing=a.spacing)
        out.mkdir(parents=True, exist_ok=True)
        curves[_label(P, D)] = curve.to_csv(out / f"zwidth_{_label(P, D)}.csv")
    verdicts = []
    for b, k in a.gains:
        g = ImpedanceGains(b, k)
        v = is_passive(config.system, g, sweep=a.sweep)
        verdicts.append({
            "B_y": b, "K_y": k, "stable": v.stable,
            "margin": float(sufficient_margin(config.system, g)),
            "sufficient": v.sufficient_criterion, "positive_real": v.positive_real,
            "worst_frequency": v.worst_frequency, "worst_real_part": v.worst_real_part,
        })
    write_rows(out / "verdicts.csv", VERDICT_COLUMNS,
               [[r[c] if r[c] is not None else "" for c in VERDICT_COLUMNS] for r in verdicts])
    return AnalysisReport(curves, verdicts)


# --- bench ----------------------------------------------------------------------

def cmd_bench(config: ExperimentConfig, out: str | Path) -> RunSummary:
    """Fixed benchmark controller for every subject."""
    out = Path(out) / "bench"
    gains = config.bench.impedance
    task = replace(config.task, movements=config.bench.movements)
    summary = RunSummary("bench", "bench", config_hash=config_hash(config))
    for name in config.subjects:
        ev = TrialEvaluator(config.system, config.human(name), task, config.simulation.dt,
                            config.simulation.penalty)
        try:
            traces = ev.traces(gains, config.subject_seed(name))
        except Exception as exc:  # reported, not raised: other subjects still run
            summary.failed[name] = f"{type(exc).__name__}: {exc}"
            continue
        for m, tr in enumerate(traces):
            tr.to_csv(_mkdir(out / name) / f"trace_m{m:02d}.csv")
            summary.rows.append({"subject": name, "stage": "bench", "tau_rms": _rms(tr.tau_e),
                                 "t_total": movement_time(tr)})
    _write_metrics(out, summary)
    return summary


def _mkdir(p: Path) -> Path:
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_metrics(out: Path, summary: RunSummary) -> None:
    write_rows(out / "metrics.csv", METRIC_COLUMNS,
               [[r[c] for c in METRIC_COLUMNS] for r in summary.rows])
    write_json(out / "summary.json", summary.to_dict())


# --- optimize -------------------------------------------------------------------

def protocol_name(constrained: bool) -> str:
    return "constrained" if constrained else "unconstrained"


def load_checkpoint(path: str | Path, config: ExperimentConfig, protocol: str) -> tuple[str, OptimizationState]:
    """Return ``(subject, state)``; any mismatch with the current run aborts."""
    data = read_json(path)
    problems = []
    if data.get("config_hash") != config_hash(config):
        problems.append("config hash differs (config or seed changed since the checkpoint)")
    if data.get("protocol") != protocol:
        problems.append(f"checkpoint protocol {data.get('protocol')!r} != {protocol!r}")
    if data.get("subject") not in config.subjects:
        problems.append(f"checkpoint subject {data.get('subject')!r} not in the configured subjects")
    if problems:
        raise CheckpointMismatch(f"cannot resume from {path}: " + "; ".join(problems))
    return data["subject"], OptimizationState.from_dict(data["state"])


def _trace_generations(config: ExperimentConfig) -> set[int]:
    policy = config.export.trace_generations
    if policy == "none":
        return set()
    if policy == "all":
        return set(range(1, config.optimizer.generations + 1))
    return {1, config.optimizer.generations}


def cmd_optimize(config: ExperimentConfig, out: str | Path, constrained: bool = True,
                 resume: str | Path | None = None,
                 instrument: Callable[[Evaluator], Evaluator] | None = None) -> RunSummary:
    """One optimizer run per subject, reset between subjects.

    ``instrument`` may wrap the evaluator (used to audit what gets evaluated).
    """
    protocol = protocol_name(constrained)
    out = Path(out) / protocol
    digest = config_hash(config)
    resumed = load_checkpoint(resume, config, protocol) if resume else None
    summary = RunSummary(protocol, f"gen{config.optimizer.generations:02d}", config_hash=digest)
    pool = ProcessPoolExecutor(config.simulation.workers) if config.simulation.workers > 1 else None
    try:
        for name in config.subjects:
            ocfg = config.optimizer_for(name, constrained)
            base = TrialEvaluator(config.system, config.human(name), config.task,
                                  config.simulation.dt, config.simulation.penalty)
            ev = instrument(base) if instrument else base
            sub = out / name
            state = resumed[1] if resumed and resumed[0] == name else None

            def checkpoint(st: OptimizationState, sub=sub, name=name):
                write_json(sub / "checkpoints" / f"gen_{st.generation:02d}.json", {
                    "config_hash": digest, "protocol": protocol, "subject": name,
                    "generation": st.generation, "state": st.to_dict(),
                })

            records, front = run_optimization(ocfg, config.system, ev, config.simulation.penalty,
                                              resume=state, on_generation=checkpoint,
                                              map_fn=pool.map if pool else map)
            _write_subject(config, sub, records, front)
            for gen in sorted(_trace_generations(config)):
                for ind in records[gen - 1].individuals:
                    seed = evaluation_seed(ocfg, ind.generation, ind.index)
                    for m, tr in enumerate(base.traces(ind.gains, seed)):
                        tr.to_csv(_mkdir(sub / "traces") / f"gen{gen:02d}_ind{ind.index:02d}_m{m:02d}.csv")
            summary.generations[name] = [_gen_stats(r) for r in records]
            summary.fronts[name] = [i.to_dict() for i in front]
            for r in (records[0], records[-1]):
                for ind in r.individuals:
                    summary.rows.append({"subject": name, "stage": f"gen{r.generation:02d}",
                                         "tau_rms": ind.fitness.tau_rms, "t_total": ind.fitness.t_total})
    finally:
        if pool:
            pool.shutdown()
    _write_metrics(out, summary)
    return summary


def _gen_stats(r: GenerationRecord) -> dict:
    st = r.stats()
    d = {"generation": r.generation,
         "n_infeasible": sum(not i.fitness.feasible for i in r.individuals)}
    for k, (m, s) in st.items():
        d[f"{k}_mean"], d[f"{k}_std"] = m, s
    return d


def _write_subject(config: ExperimentConfig, sub: Path, records: list[GenerationRecord],
                   front: list[Individual]) -> None:
    sub.mkdir(parents=True, exist_ok=True)
    write_generations(sub / "generations.csv", records)
    write_evaluations(sub / "evaluations.csv", records, config.system)
    write_front(sub / "front.csv", front)
    lo, hi = config.optimizer.K_y_bounds
    curve = z_width_boundary(config.system, lo, hi, n=config.analysis.samples, spacing="log")
    rows = [["boundary", b, k] for k, b in zip(curve.stiffness, curve.damping)]
    rows += [["evaluated", i.gains.B_y, i.gains.K_y] for r in records for i in r.individuals]
    rows += [["front", i.gains.B_y, i.gains.K_y] for i in front]
    write_rows(sub / "zwidth_overlay.csv", ("kind", "B_y", "K_y"), rows)


# --- export-profiles ------------------------------------------------------------

_OPT_TRACE = re.compile(r"gen(\d+)_ind\d+_m\d+\.csv$")


def _stages(run_dir: Path) -> dict[tuple[str, str, str], list[Path]]:
    stages: dict[tuple[str, str, str], list[Path]] = {}
    bench = run_dir / "bench"
    if bench.is_dir():
        for sub in sorted(p for p in bench.iterdir() if p.is_dir()):
            files = sorted(sub.glob("trace_m*.csv"))
            if files:
                stages[("bench", "benchmark", sub.name)] = files
    for protocol in ("unconstrained", "constrained"):
        root = run_dir / protocol
        if not root.is_dir():
            continue
        for sub in sorted(p for p in root.iterdir() if p.is_dir()):
            by_gen: dict[int, list[Path]] = {}
            for f in sorted((sub / "traces").glob("gen*_ind*_m*.csv")):
                m = _OPT_TRACE.search(f.name)
                if m:
                    by_gen.setdefault(int(m.group(1)), []).append(f)
            for gen, files in by_gen.items():
                stages[(protocol, f"gen{gen:02d}", sub.name)] = files
    return stages


def cmd_export_profiles(run_dir: str | Path, clip: float = 4.0) -> list[Path]:
    """Mean and deviation torque profiles per stage and subject.

    Extension profiles are sign-flipped so they overlay flexion.
    """
    run_dir = Path(run_dir)
    stages = _stages(run_dir)
    if not stages:
        raise MissingTraces(f"no trace CSVs under {run_dir}")
    written = []
    for (protocol, stage, subject), files in sorted(stages.items()):
        traces = [SimulationTrace.from_csv(f) for f in files]
        t, mean, std = torque_profile_stats(traces, clip=clip, sign_by_target=True)
        dt = traces[0].dt
        shortest = min(len(tr) for tr in traces)
        notes = [f"{protocol} {stage} {subject}: {len(traces)} traces, clip {clip:g} s"]
        if (shortest - 1) * dt < clip:
            notes.append(f"truncated to the shortest trace: {len(t)} samples ({t[-1]:.3f} s)")
        written.append(write_rows(run_dir / "profiles" / f"{protocol}_{stage}_{subject}.csv",
                                  ("t", "tau_mean", "tau_std"), zip(t, mean, std), notes))
    return written


def read_metrics(path: str | Path) -> list[dict]:
    return [{"subject": r["subject"], "stage": r["stage"], "tau_rms": float(r["tau_rms"]),
             "t_total": float(r["t_total"])} for r in read_rows(path)]
