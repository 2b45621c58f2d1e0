"""CSV/JSON persistence. Floats are written with ``repr`` so they re-parse exactly."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..optimizer import GenerationRecord, Individual
from ..passivity import sufficient_margin
from ..model import SystemParams

GENERATION_COLUMNS = (
    "generation", "n", "n_infeasible",
    "B_y_mean", "B_y_std", "K_y_mean", "K_y_std",
    "tau_rms_mean", "tau_rms_std", "t_total_mean", "t_total_std",
)
EVALUATION_COLUMNS = (
    "generation", "index", "B_y", "K_y", "tau_rms", "t_total", "feasible", "margin", "margin_ok",
)
FRONT_COLUMNS = ("B_y", "K_y", "tau_rms", "t_total", "feasible", "crowding")


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_rows(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence],
               comments: Sequence[str] = ()) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_rows(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_generations(path, records: Sequence[GenerationRecord]) -> Path:
    rows = []
    for r in records:
        st = r.stats()
        rows.append([r.generation, len(r.individuals),
                     sum(not i.fitness.feasible for i in r.individuals),
                     *[v for key in ("B_y", "K_y", "tau_rms", "t_total") for v in st[key]]])
    return write_rows(path, GENERATION_COLUMNS, rows)


def write_evaluations(path, records: Sequence[GenerationRecord], params: SystemParams) -> Path:
    """One row per evaluated controller, with its closed-form passivity margin."""
    rows = []
    for r in records:
        for ind in r.individuals:
            margin = sufficient_margin(params, ind.gains)
            rows.append([ind.generation, ind.index, ind.gains.B_y, ind.gains.K_y,
                         ind.fitness.tau_rms, ind.fitness.t_total, ind.fitness.feasible,
                         float(margin), margin > 0])
    return write_rows(path, EVALUATION_COLUMNS, rows)


def write_front(path, front: Sequence[Individual]) -> Path:
    rows = [[i.gains.B_y, i.gains.K_y, i.fitness.tau_rms, i.fitness.t_total, i.fitness.feasible,
             i.crowding] for i in sorted(front, key=lambda i: i.fitness.tau_rms)]
    return write_rows(path, FRONT_COLUMNS, rows)


def write_json(path: str | Path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True))
    return path


def read_json(path: str | Path):
    return json.loads(Path(path).read_text())


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if hasattr(x, "item") and callable(x.item):
        return x.item()
    return x
