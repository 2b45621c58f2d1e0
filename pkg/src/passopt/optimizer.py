"""NSGA-II over admittance gains ``[B_y, K_y]`` with a passive-region repair step.

Each generation evaluates ``population_size`` new controllers: the random
initial batch first, then one offspring batch per generation. Survivors are
chosen by elitist (mu + lambda) truncation on rank and crowding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .model import ImpedanceGains, SystemParams
from .passivity import boundary_damping, stability_condition, sufficient_criterion
from .simulator import FitnessVector, PenaltyFitness

Evaluator = Callable[[ImpedanceGains, np.random.SeedSequence], FitnessVector]


class RepairFailed(RuntimeError):
    pass


class InvalidReference(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    population_size: int = 5
    generations: int = 10
    B_y_bounds: tuple[float, float] = (0.5, 200.0)
    K_y_bounds: tuple[float, float] = (1.0, 500.0)
    constrained: bool = True
    crossover_prob: float = 0.9
    crossover_eta: float = 15.0
    mutation_prob: float = 0.5
    mutation_eta: float = 20.0
    tournament_size: int = 2
    seed: int = 0
    repair: str = "resample"
    max_resample: int = 1000
    encoding: str = "log"

    def __post_init__(self):
        errors = self.problems()
        if errors:
            raise ValueError("; ".join(errors))

    def problems(self) -> list[str]:
        errs = []
        if self.population_size < 2:
            errs.append("population_size must be >= 2")
        if self.generations < 1:
            errs.append("generations must be >= 1")
        for name in ("B_y_bounds", "K_y_bounds"):
            b = getattr(self, name)
            if len(b) != 2:
                errs.append(f"{name} must be [lo, hi]")
            elif not (0 < b[0] < b[1]):
                errs.append(f"{name} must satisfy 0 < lo < hi, got {list(b)}")
        if not 0 <= self.crossover_prob <= 1:
            errs.append("crossover_prob must be in [0, 1]")
        if not 0 <= self.mutation_prob <= 1:
            errs.append("mutation_prob must be in [0, 1]")
        if self.crossover_eta < 0 or self.mutation_eta < 0:
            errs.append("distribution indices must be >= 0")
        if self.tournament_size < 1:
            errs.append("tournament_size must be >= 1")
        if self.repair not in ("resample", "project"):
            errs.append(f"repair must be 'resample' or 'project', got {self.repair!r}")
        if self.max_resample < 1:
            errs.append("max_resample must be >= 1")
        if self.encoding not in ("linear", "log"):
            errs.append(f"encoding must be 'linear' or 'log', got {self.encoding!r}")
        return errs

    @property
    def lower(self) -> np.ndarray:
        """Lower gene bounds in the encoded space."""
        return self.encode(np.array([self.B_y_bounds[0], self.K_y_bounds[0]], dtype=float))

    @property
    def upper(self) -> np.ndarray:
        return self.encode(np.array([self.B_y_bounds[1], self.K_y_bounds[1]], dtype=float))

    def encode(self, values) -> np.ndarray:
        """Gains to genes; variation operators work on genes."""
        values = np.asarray(values, dtype=float)
        return np.log(values) if self.encoding == "log" else values.copy()

    def decode(self, genes) -> ImpedanceGains:
        genes = np.asarray(genes, dtype=float)
        vals = np.exp(genes) if self.encoding == "log" else genes
        # exp(log(x)) may drift by an ulp outside the box
        lo = np.array([self.B_y_bounds[0], self.K_y_bounds[0]])
        hi = np.array([self.B_y_bounds[1], self.K_y_bounds[1]])
        vals = np.minimum(np.maximum(vals, lo), hi)
        return ImpedanceGains(float(vals[0]), float(vals[1]))


@dataclass
class Individual:
    gains: ImpedanceGains
    fitness: FitnessVector | None = None
    rank: int | None = None
    crowding: float | None = None
    generation: int = 0
    index: int = 0

    @property
    def evaluated(self) -> bool:
        return self.fitness is not None

    def to_dict(self) -> dict:
        f = self.fitness
        return {
            "B_y": self.gains.B_y,
            "K_y": self.gains.K_y,
            "tau_rms": None if f is None else f.tau_rms,
            "t_total": None if f is None else f.t_total,
            "feasible": None if f is None else f.feasible,
            "rank": self.rank,
            # inf is not valid JSON
            "crowding": None if self.crowding is None else (
                "inf" if math.isinf(self.crowding) else self.crowding),
            "generation": self.generation,
            "index": self.index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Individual":
        fit = None
        if d.get("tau_rms") is not None:
            fit = FitnessVector(d["tau_rms"], d["t_total"], bool(d["feasible"]))
        crowd = d.get("crowding")
        if crowd == "inf":
            crowd = math.inf
        return cls(ImpedanceGains(d["B_y"], d["K_y"]), fit, d.get("rank"), crowd,
                   d.get("generation", 0), d.get("index", 0))


@dataclass
class GenerationRecord:
    generation: int
    individuals: list[Individual]
    survivors: list[Individual] = field(default_factory=list)

    def stats(self) -> dict[str, tuple[float, float]]:
        """Population mean and deviation of gains and objectives."""
        arr = self.matrix()
        keys = ("B_y", "K_y", "tau_rms", "t_total")
        return {k: (float(arr[:, i].mean()), float(arr[:, i].std())) for i, k in enumerate(keys)}

    def matrix(self) -> np.ndarray:
        return np.array([[ind.gains.B_y, ind.gains.K_y, ind.fitness.tau_rms, ind.fitness.t_total]
                         for ind in self.individuals])

    def to_dict(self) -> dict:
        return {
            "generation": self.generation,
            "individuals": [i.to_dict() for i in self.individuals],
            "survivors": [i.to_dict() for i in self.survivors],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationRecord":
        return cls(d["generation"], [Individual.from_dict(x) for x in d["individuals"]],
                   [Individual.from_dict(x) for x in d["survivors"]])


# --- sorting -------------------------------------------------------------------

def dominates(a: FitnessVector, b: FitnessVector) -> bool:
    """Constrained domination for minimization of ``(tau_rms, t_total)``."""
    if a.feasible != b.feasible:
        return a.feasible
    fa, fb = a.as_tuple(), b.as_tuple()
    return all(x <= y for x, y in zip(fa, fb)) and any(x < y for x, y in zip(fa, fb))


def non_dominated_sort_indices(fitnesses: Sequence[FitnessVector]) -> list[list[int]]:
    """Fast non-dominated sort; returns fronts as index lists, best first."""
    n = len(fitnesses)
    dominated_by = [[] for _ in range(n)]
    counts = [0] * n
    fronts: list[list[int]] = [[]]
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(fitnesses[i], fitnesses[j]):
                dominated_by[i].append(j)
                counts[j] += 1
            elif dominates(fitnesses[j], fitnesses[i]):
                dominated_by[j].append(i)
                counts[i] += 1
    fronts[0] = [i for i in range(n) if counts[i] == 0]
    k = 0
    while fronts[k]:
        nxt = []
        for i in fronts[k]:
            for j in dominated_by[i]:
                counts[j] -= 1
                if counts[j] == 0:
                    nxt.append(j)
        k += 1
        fronts.append(sorted(nxt))
    return fronts[:-1]


def non_dominated_sort(population: Sequence[Individual]) -> list[list[Individual]]:
    if any(not ind.evaluated for ind in population):
        raise ValueError("all individuals must be evaluated before sorting")
    fronts = non_dominated_sort_indices([ind.fitness for ind in population])
    return [[population[i] for i in front] for front in fronts]


def crowding_distance_values(objectives: np.ndarray) -> np.ndarray:
    """Crowding distance of each row of an ``(n, m)`` objective array."""
    objectives = np.atleast_2d(np.asarray(objectives, dtype=float))
    n, m = objectives.shape
    if n == 0:
        raise ValueError("front is empty")
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = math.inf
        return dist
    for k in range(m):
        order = np.argsort(objectives[:, k], kind="stable")
        col = objectives[order, k]
        dist[order[0]] = dist[order[-1]] = math.inf
        span = col[-1] - col[0]
        if span == 0:
            continue
        dist[order[1:-1]] += (col[2:] - col[:-2]) / span
    return dist


def crowding_distance(front: Sequence[Individual]) -> list[float]:
    """Assign and return crowding distances for one front."""
    values = crowding_distance_values(np.array([ind.fitness.as_tuple() for ind in front]))
    for ind, d in zip(front, values):
        ind.crowding = float(d)
    return [float(d) for d in values]


def assign_rank_and_crowding(population: Sequence[Individual]) -> list[list[Individual]]:
    fronts = non_dominated_sort(population)
    for r, front in enumerate(fronts):
        for ind in front:
            ind.rank = r
        crowding_distance(front)
    return fronts


# --- variation -------------------------------------------------------------------

def _better(a: Individual, b: Individual) -> bool:
    """Crowded comparison: lower rank wins, then larger crowding."""
    if a.rank != b.rank:
        return a.rank < b.rank
    return a.crowding > b.crowding


def tournament(population: Sequence[Individual], size: int, rng: np.random.Generator) -> Individual:
    picks = rng.integers(0, len(population), size=size)
    best = population[picks[0]]
    for i in picks[1:]:
        if _better(population[i], best):
            best = population[i]
    return best


def select_parents(population: Sequence[Individual], tournament_size: int, rng: np.random.Generator,
                   n_pairs: int) -> list[tuple[Individual, Individual]]:
    """Binary (or k-ary) tournaments with replacement, by rank then crowding."""
    if any(ind.rank is None or ind.crowding is None for ind in population):
        raise ValueError("population must be ranked before selection")
    return [(tournament(population, tournament_size, rng), tournament(population, tournament_size, rng))
            for _ in range(n_pairs)]


def _sbx_gene(y1: float, y2: float, lo: float, hi: float, eta: float, u: float) -> tuple[float, float]:
    """Bounded simulated binary crossover of one gene (``y1 < y2``)."""
    span = y2 - y1
    beta = 1.0 + 2.0 * (y1 - lo) / span
    alpha = 2.0 - beta ** -(eta + 1.0)
    betaq = (u * alpha) ** (1.0 / (eta + 1.0)) if u <= 1.0 / alpha \
        else (1.0 / (2.0 - u * alpha)) ** (1.0 / (eta + 1.0))
    c1 = 0.5 * ((y1 + y2) - betaq * span)

    beta = 1.0 + 2.0 * (hi - y2) / span
    alpha = 2.0 - beta ** -(eta + 1.0)
    betaq = (u * alpha) ** (1.0 / (eta + 1.0)) if u <= 1.0 / alpha \
        else (1.0 / (2.0 - u * alpha)) ** (1.0 / (eta + 1.0))
    c2 = 0.5 * ((y1 + y2) + betaq * span)
    return min(max(c1, lo), hi), min(max(c2, lo), hi)


def crossover_sbx(a: ImpedanceGains, b: ImpedanceGains, config: OptimizerConfig,
                  rng: np.random.Generator) -> tuple[ImpedanceGains, ImpedanceGains]:
    if a == b or rng.random() >= config.crossover_prob:
        return a, b
    pa, pb = config.encode(a.as_array()), config.encode(b.as_array())
    ca, cb = pa.copy(), pb.copy()
    lower, upper = config.lower, config.upper
    for k in range(2):
        u_swap, u = rng.random(), rng.random()
        if u_swap > 0.5 or abs(pa[k] - pb[k]) <= 1e-14:
            continue
        y1, y2 = min(pa[k], pb[k]), max(pa[k], pb[k])
        c1, c2 = _sbx_gene(y1, y2, lower[k], upper[k], config.crossover_eta, u)
        if rng.random() < 0.5:
            c1, c2 = c2, c1
        ca[k], cb[k] = c1, c2
    return config.decode(ca), config.decode(cb)


def mutate_polynomial(g: ImpedanceGains, config: OptimizerConfig, rng: np.random.Generator) -> ImpedanceGains:
    """Bounded polynomial mutation, each gene with probability ``mutation_prob``."""
    y = config.encode(g.as_array())
    eta = config.mutation_eta
    mutated = False
    for k in range(2):
        if rng.random() >= config.mutation_prob:
            continue
        mutated = True
        lo, hi = config.lower[k], config.upper[k]
        d1 = (y[k] - lo) / (hi - lo)
        d2 = (hi - y[k]) / (hi - lo)
        u = rng.random()
        p = 1.0 / (eta + 1.0)
        if u < 0.5:
            val = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1) ** (eta + 1.0)
            dq = val ** p - 1.0
        else:
            val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2) ** (eta + 1.0)
            dq = 1.0 - val ** p
        y[k] = min(max(y[k] + dq * (hi - lo), lo), hi)
    return config.decode(y) if mutated else g


def is_admissible(g: ImpedanceGains, params: SystemParams) -> bool:
    """The optimization constraint: stable and inside the passive Z-width region."""
    return stability_condition(params, g) and sufficient_criterion(params, g)


def _uniform(config: OptimizerConfig, rng: np.random.Generator) -> ImpedanceGains:
    """Uniform draw in gene space (log-uniform gains under the log encoding)."""
    return config.decode(rng.uniform(config.lower, config.upper))


def project_to_passive(g: ImpedanceGains, params: SystemParams, config: OptimizerConfig) -> ImpedanceGains:
    """Keep ``K_y``; lift ``B_y`` just above the Z-width boundary."""
    b = float(boundary_damping(params, g.K_y)) * (1.0 + 1e-3)
    projected = ImpedanceGains(max(b, config.B_y_bounds[0]), g.K_y)
    if projected.B_y > config.B_y_bounds[1] or not is_admissible(projected, params):
        raise RepairFailed(f"projection of {g} is not admissible within bounds")
    return projected


def repair_to_passive(g: ImpedanceGains, params: SystemParams, config: OptimizerConfig,
                      rng: np.random.Generator) -> ImpedanceGains:
    if is_admissible(g, params):
        return g
    if config.repair == "resample":
        for _ in range(config.max_resample):
            cand = _uniform(config, rng)
            if is_admissible(cand, params):
                return cand
    return project_to_passive(g, params, config)


# --- evolution --------------------------------------------------------------------

def evaluation_seed(config: OptimizerConfig, generation: int, index: int) -> np.random.SeedSequence:
    """Per-individual noise stream, independent of evaluation order."""
    return np.random.SeedSequence(config.seed, spawn_key=(generation, index))


def evaluate_batch(batch: list[Individual], evaluator: Evaluator, config: OptimizerConfig,
                   penalty: PenaltyFitness = PenaltyFitness(),
                   map_fn: Callable = map) -> list[Individual]:
    todo = [ind for ind in batch if not ind.evaluated]
    seeds = [evaluation_seed(config, ind.generation, ind.index) for ind in todo]
    results = list(map_fn(_safe_eval(evaluator, penalty), [ind.gains for ind in todo], seeds))
    for ind, fit in zip(todo, results):
        ind.fitness = fit
    return batch


class _safe_eval:
    """Evaluator wrapper that turns exceptions into penalty fitness (picklable)."""

    def __init__(self, evaluator: Evaluator, penalty: PenaltyFitness):
        self.evaluator = evaluator
        self.penalty = penalty

    def __call__(self, gains, seed):
        try:
            return self.evaluator(gains, seed)
        except Exception:
            return FitnessVector(self.penalty.tau_rms, self.penalty.t_total, feasible=False)


def initial_population(config: OptimizerConfig, params: SystemParams, rng: np.random.Generator) -> list[Individual]:
    pop = []
    for i in range(config.population_size):
        g = _uniform(config, rng)
        if config.constrained:
            g = repair_to_passive(g, params, config, rng)
        pop.append(Individual(g, generation=1, index=i))
    return pop


def make_offspring(population: Sequence[Individual], config: OptimizerConfig, params: SystemParams,
                   rng: np.random.Generator, generation: int) -> list[Individual]:
    n = config.population_size
    pairs = select_parents(population, config.tournament_size, rng, (n + 1) // 2)
    children: list[ImpedanceGains] = []
    for a, b in pairs:
        c1, c2 = crossover_sbx(a.gains, b.gains, config, rng)
        children.extend([mutate_polynomial(c1, config, rng), mutate_polynomial(c2, config, rng)])
    children = children[:n]
    if config.constrained:
        children = [repair_to_passive(c, params, config, rng) for c in children]
    return [Individual(c, generation=generation, index=i) for i, c in enumerate(children)]


def environmental_selection(combined: list[Individual], size: int) -> list[Individual]:
    """(mu + lambda) truncation by front, ties in the last front broken by crowding."""
    fronts = assign_rank_and_crowding(combined)
    survivors: list[Individual] = []
    for front in fronts:
        if len(survivors) + len(front) <= size:
            survivors.extend(front)
            continue
        rest = sorted(front, key=lambda ind: -ind.crowding)
        survivors.extend(rest[: size - len(survivors)])
        break
    # rank/crowding are re-derived on the surviving population
    assign_rank_and_crowding(survivors)
    return survivors


def evolve_generation(population: list[Individual], evaluator: Evaluator, config: OptimizerConfig,
                      rng: np.random.Generator, params: SystemParams, generation: int,
                      penalty: PenaltyFitness = PenaltyFitness(),
                      map_fn: Callable = map) -> tuple[list[Individual], GenerationRecord]:
    """Breed, repair, evaluate one offspring batch and truncate back to size."""
    evaluate_batch(population, evaluator, config, penalty, map_fn)
    if any(ind.rank is None for ind in population):
        assign_rank_and_crowding(population)
    offspring = make_offspring(population, config, params, rng, generation)
    evaluate_batch(offspring, evaluator, config, penalty, map_fn)
    survivors = environmental_selection([_copy(i) for i in population] + [_copy(i) for i in offspring],
                                        config.population_size)
    return survivors, GenerationRecord(generation, offspring, [_copy(i) for i in survivors])


def _copy(ind: Individual) -> Individual:
    return replace(ind)


@dataclass
class OptimizationState:
    """Everything needed to continue a run exactly."""

    generation: int
    population: list[Individual]
    records: list[GenerationRecord]
    rng_state: dict

    def to_dict(self) -> dict:
        return {
            "generation": self.generation,
            "population": [i.to_dict() for i in self.population],
            "records": [r.to_dict() for r in self.records],
            "rng_state": self.rng_state,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizationState":
        return cls(d["generation"], [Individual.from_dict(x) for x in d["population"]],
                   [GenerationRecord.from_dict(r) for r in d["records"]], d["rng_state"])


def run_optimization(config: OptimizerConfig, params: SystemParams, evaluator: Evaluator,
                     penalty: PenaltyFitness = PenaltyFitness(),
                     resume: OptimizationState | None = None,
                     on_generation: Callable[[OptimizationState], None] | None = None,
                     map_fn: Callable = map) -> tuple[list[GenerationRecord], list[Individual]]:
    """Run (or continue) the generational loop; returns records and the final first front."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    if resume is None:
        population = initial_population(config, params, rng)
        evaluate_batch(population, evaluator, config, penalty, map_fn)
        assign_rank_and_crowding(population)
        records = [GenerationRecord(1, [_copy(i) for i in population], [_copy(i) for i in population])]
        state = OptimizationState(1, population, records, rng.bit_generator.state)
        if on_generation:
            on_generation(state)
    else:
        rng.bit_generator.state = resume.rng_state
        population = [_copy(i) for i in resume.population]
        records = list(resume.records)
        state = resume

    for gen in range(state.generation + 1, config.generations + 1):
        population, record = evolve_generation(population, evaluator, config, rng, params, gen,
                                               penalty, map_fn)
        records.append(record)
        state = OptimizationState(gen, population, records, rng.bit_generator.state)
        if on_generation:
            on_generation(state)

    front = [ind for ind in population if ind.rank == 0]
    return records, front


def hypervolume_2d(points: Iterable[Sequence[float]], reference: Sequence[float]) -> float:
    """Exact area dominated by ``points`` (minimization) and bounded by ``reference``."""
    pts = np.asarray(list(points), dtype=float).reshape(-1, 2)
    ref = np.asarray(reference, dtype=float)
    if pts.size and np.any(pts > ref):
        raise InvalidReference(f"reference {ref.tolist()} does not bound every point")
    area, best_y = 0.0, ref[1]
    for x, y in pts[np.lexsort((pts[:, 1], pts[:, 0]))]:
        if y < best_y:
            area += (ref[0] - x) * (best_y - y)
            best_y = y
    return float(area)
