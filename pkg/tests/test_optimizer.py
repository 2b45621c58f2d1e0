import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from passopt.model import ImpedanceGains, SystemParams
from passopt.optimizer import (
    _better,
    GenerationRecord,
    Individual,
    InvalidReference,
    OptimizationState,
    OptimizerConfig,
    RepairFailed,
    assign_rank_and_crowding,
    crossover_sbx,
    crowding_distance,
    crowding_distance_values,
    dominates,
    environmental_selection,
    evolve_generation,
    hypervolume_2d,
    initial_population,
    is_admissible,
    mutate_polynomial,
    non_dominated_sort,
    non_dominated_sort_indices,
    project_to_passive,
    repair_to_passive,
    run_optimization,
    select_parents,
    tournament,
)
from passopt.passivity import sufficient_criterion
from passopt.simulator import FitnessVector

P = SystemParams()


def ind(f1, f2, feasible=True, **kw):
    return Individual(ImpedanceGains(1.0, 1.0), FitnessVector(f1, f2, feasible), **kw)


def brute_force_fronts(fits):
    """Peel off the non-dominated set repeatedly (O(n^3))."""
    left = set(range(len(fits)))
    fronts = []
    while left:
        front = sorted(i for i in left if not any(dominates(fits[j], fits[i]) for j in left if j != i))
        fronts.append(front)
        left -= set(front)
    return fronts


def identity_evaluator(g, seed):
    return FitnessVector(g.B_y, g.K_y)


fitness_st = st.builds(FitnessVector, st.integers(0, 5).map(float), st.integers(1, 6).map(float),
                       st.booleans())


class TestConfig:
    def test_defaults_valid(self):
        assert OptimizerConfig().problems() == []

    def test_reports_all_problems(self):
        with pytest.raises(ValueError) as exc:
            OptimizerConfig(population_size=1, B_y_bounds=(5.0, 1.0), repair="magic")
        msg = str(exc.value)
        assert "population_size" in msg and "B_y_bounds" in msg and "repair" in msg

    @pytest.mark.parametrize("encoding", ["linear", "log"])
    def test_encode_decode(self, encoding):
        cfg = OptimizerConfig(encoding=encoding)
        g = ImpedanceGains(12.5, 333.0)
        back = cfg.decode(cfg.encode(g.as_array()))
        assert back.B_y == pytest.approx(g.B_y, rel=1e-15) and back.K_y == pytest.approx(g.K_y, rel=1e-15)


class TestSorting:
    def test_hand_example(self):
        pop = [ind(1, 2), ind(2, 1), ind(3, 3)]
        fronts = non_dominated_sort(pop)
        assert [[i.fitness.as_tuple() for i in f] for f in fronts] == [[(1, 2), (2, 1)], [(3, 3)]]

    def test_identical(self):
        assert non_dominated_sort_indices([FitnessVector(1.0, 1.0)] * 4) == [[0, 1, 2, 3]]

    def test_infeasible_dominated_by_any_feasible(self):
        fits = [FitnessVector(0.1, 0.1, False), FitnessVector(9.0, 9.0, True)]
        assert non_dominated_sort_indices(fits) == [[1], [0]]

    @given(st.lists(fitness_st, min_size=1, max_size=20))
    def test_matches_brute_force(self, fits):
        assert non_dominated_sort_indices(fits) == brute_force_fronts(fits)

    def test_random_populations(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(1, 21))
            fits = [FitnessVector(float(a), float(b), bool(c)) for a, b, c in
                    zip(rng.integers(0, 6, n), rng.integers(1, 7, n), rng.random(n) < 0.8)]
            assert non_dominated_sort_indices(fits) == brute_force_fronts(fits)

    def test_unevaluated_rejected(self):
        with pytest.raises(ValueError):
            non_dominated_sort([Individual(ImpedanceGains(1, 1))])


class TestCrowding:
    def test_pair_is_infinite(self):
        assert crowding_distance([ind(1, 2), ind(2, 1)]) == [math.inf, math.inf]

    def test_collinear(self):
        d = crowding_distance_values(np.array([[0.0, 2.0], [1.0, 1.0], [2.0, 0.0]]))
        assert d[1] == pytest.approx(2.0) and math.isinf(d[0]) and math.isinf(d[2])

    def test_zero_range(self):
        d = crowding_distance_values(np.array([[1.0, 1.0]] * 4))
        assert sorted(d)[:2] == [0.0, 0.0]

    def test_empty(self):
        with pytest.raises(ValueError):
            crowding_distance_values(np.zeros((0, 2)))


class TestSelection:
    def test_rank_wins(self):
        a, b = ind(1, 1, rank=0, crowding=0.0), ind(2, 2, rank=1, crowding=math.inf)
        assert _better(a, b) and not _better(b, a)

    def test_crowding_tiebreak(self):
        a, b = ind(1, 2, rank=0, crowding=5.0), ind(2, 1, rank=0, crowding=1.0)
        assert _better(a, b) and not _better(b, a)

    def test_tournament_with_both_entrants(self):
        pop = [ind(1, 1, rank=0, crowding=0.0), ind(2, 2, rank=1, crowding=math.inf)]
        rng = np.random.default_rng(5)
        wins = [tournament(pop, 2, rng) for _ in range(400)]
        # rank 1 can only win when drawn against itself (probability 1/4)
        frac = sum(w.rank == 1 for w in wins) / len(wins)
        assert 0.15 < frac < 0.35

    def test_deterministic(self):
        pop = [ind(a, 6 - a) for a in range(1, 6)]
        assign_rank_and_crowding(pop)
        a = select_parents(pop, 2, np.random.default_rng(9), 10)
        b = select_parents(pop, 2, np.random.default_rng(9), 10)
        assert [(x.fitness, y.fitness) for x, y in a] == [(x.fitness, y.fitness) for x, y in b]

    def test_requires_ranking(self):
        with pytest.raises(ValueError):
            select_parents([ind(1, 1)], 2, np.random.default_rng(0), 1)


gains_in_box = st.builds(ImpedanceGains, st.floats(0.5, 200.0), st.floats(1.0, 500.0))


class TestVariation:
    @pytest.mark.parametrize("encoding", ["linear", "log"])
    def test_sbx_identity(self, encoding):
        cfg = OptimizerConfig(encoding=encoding)
        g = ImpedanceGains(3.0, 40.0)
        rng = np.random.default_rng(0)
        for _ in range(100):
            assert crossover_sbx(g, g, cfg, rng) == (g, g)

    def test_sbx_no_crossover(self):
        cfg = OptimizerConfig(crossover_prob=0.0)
        a, b = ImpedanceGains(3.0, 40.0), ImpedanceGains(100.0, 2.0)
        assert crossover_sbx(a, b, cfg, np.random.default_rng(0)) == (a, b)

    @pytest.mark.parametrize("encoding", ["linear", "log"])
    def test_sbx_bounds(self, encoding):
        cfg = OptimizerConfig(encoding=encoding)
        rng = np.random.default_rng(1)
        lo = np.array([cfg.B_y_bounds[0], cfg.K_y_bounds[0]])
        hi = np.array([cfg.B_y_bounds[1], cfg.K_y_bounds[1]])
        for _ in range(10_000):
            a = ImpedanceGains(*rng.uniform(lo, hi))
            b = ImpedanceGains(*rng.uniform(lo, hi))
            for c in crossover_sbx(a, b, cfg, rng):
                assert np.all(c.as_array() >= lo) and np.all(c.as_array() <= hi)

    def test_mutation_identity(self):
        cfg = OptimizerConfig(mutation_prob=0.0)
        g = ImpedanceGains(3.0, 40.0)
        assert mutate_polynomial(g, cfg, np.random.default_rng(0)) is g

    @pytest.mark.parametrize("encoding", ["linear", "log"])
    def test_mutation_bounds_and_boundary_direction(self, encoding):
        cfg = OptimizerConfig(encoding=encoding, mutation_prob=1.0)
        rng = np.random.default_rng(2)
        at_lower = ImpedanceGains(cfg.B_y_bounds[0], cfg.K_y_bounds[0])
        moved = 0
        for _ in range(10_000):
            m = mutate_polynomial(at_lower, cfg, rng)
            assert m.B_y >= cfg.B_y_bounds[0] and m.K_y >= cfg.K_y_bounds[0]
            assert m.B_y <= cfg.B_y_bounds[1] and m.K_y <= cfg.K_y_bounds[1]
            moved += m.B_y > cfg.B_y_bounds[0]
        assert moved > 1000

    @given(gains_in_box, st.integers(0, 2**32 - 1))
    def test_mutation_stays_in_box(self, g, seed):
        cfg = OptimizerConfig()
        m = mutate_polynomial(g, cfg, np.random.default_rng(seed))
        assert cfg.B_y_bounds[0] <= m.B_y <= cfg.B_y_bounds[1]
        assert cfg.K_y_bounds[0] <= m.K_y <= cfg.K_y_bounds[1]


class TestRepair:
    def test_keep_passive(self):
        g = ImpedanceGains(50.0, 100.0)
        assert repair_to_passive(g, P, OptimizerConfig(), np.random.default_rng(0)) is g

    def test_project_example(self):
        cfg = OptimizerConfig(repair="project")
        g = repair_to_passive(ImpedanceGains(0.1, 100.0), P, cfg, np.random.default_rng(0))
        assert g.K_y == 100.0
        assert g.B_y == pytest.approx(math.sqrt(155.0) * 1.001, rel=1e-12)
        assert g.B_y == pytest.approx(12.46, abs=0.01)

    def test_projection_outside_box_fails(self):
        cfg = OptimizerConfig(B_y_bounds=(0.5, 1.0), repair="project")
        with pytest.raises(RepairFailed):
            project_to_passive(ImpedanceGains(0.6, 400.0), P, cfg)

    def test_resample_falls_back_to_projection(self, monkeypatch):
        import passopt.optimizer as opt

        draws = []

        def never_passive(config, rng):
            draws.append(1)
            return ImpedanceGains(0.5, 400.0)

        monkeypatch.setattr(opt, "_uniform", never_passive)
        cfg = OptimizerConfig(max_resample=7)
        g = repair_to_passive(ImpedanceGains(0.5, 100.0), P, cfg, np.random.default_rng(0))
        assert len(draws) == 7
        assert g == project_to_passive(ImpedanceGains(0.5, 100.0), P, cfg)

    @settings(max_examples=300)
    @given(st.floats(0.5, 200.0), st.floats(1.0, 500.0), st.sampled_from(["resample", "project"]),
           st.integers(0, 1000))
    def test_postcondition(self, b, k, strategy, seed):
        cfg = OptimizerConfig(repair=strategy)
        g = repair_to_passive(ImpedanceGains(b, k), P, cfg, np.random.default_rng(seed))
        assert sufficient_criterion(P, g)

    def test_many_infeasible_inputs(self):
        rng = np.random.default_rng(4)
        cfg = OptimizerConfig()
        count = 0
        while count < 10_000:
            g = ImpedanceGains(rng.uniform(0.5, 20.0), rng.uniform(1.0, 500.0))
            if sufficient_criterion(P, g):
                continue
            count += 1
            assert sufficient_criterion(P, repair_to_passive(g, P, cfg, rng))


class TestEvolution:
    def test_population_size(self):
        cfg = OptimizerConfig(population_size=5, seed=1)
        rng = np.random.default_rng(1)
        pop = initial_population(cfg, P, rng)
        new, rec = evolve_generation(pop, identity_evaluator, cfg, rng, P, 2)
        assert len(new) == 5 and len(rec.individuals) == 5

    def test_budget(self):
        calls = []

        def ev(g, seed):
            calls.append(g)
            return identity_evaluator(g, seed)

        run_optimization(OptimizerConfig(generations=1, population_size=5), P, ev)
        assert len(calls) == 5
        calls.clear()
        run_optimization(OptimizerConfig(generations=10, population_size=5), P, ev)
        assert len(calls) == 50

    def test_elitism(self):
        cfg = OptimizerConfig(generations=20, constrained=False, seed=3)
        best = []
        run_optimization(cfg, P, identity_evaluator,
                         on_generation=lambda s: best.append(
                             [min(i.fitness.as_tuple()[k] for i in s.population) for k in range(2)]))
        arr = np.array(best)
        assert np.all(np.diff(arr, axis=0) <= 0)

    def test_constrained_submissions_are_passive(self):
        seen = []

        def ev(g, seed):
            seen.append(g)
            return identity_evaluator(g, seed)

        run_optimization(OptimizerConfig(generations=10, seed=5), P, ev)
        assert seen and all(is_admissible(g, P) for g in seen)

    def test_bounds_every_generation(self):
        cfg = OptimizerConfig(generations=15, constrained=False, seed=8)
        records, _ = run_optimization(cfg, P, identity_evaluator)
        for r in records:
            for i in r.individuals + r.survivors:
                assert cfg.B_y_bounds[0] <= i.gains.B_y <= cfg.B_y_bounds[1]
                assert cfg.K_y_bounds[0] <= i.gains.K_y <= cfg.K_y_bounds[1]

    def test_evaluator_failure_is_infeasible(self):
        def ev(g, seed):
            if g.B_y > 100:
                raise RuntimeError("boom")
            return identity_evaluator(g, seed)

        records, front = run_optimization(OptimizerConfig(generations=3, seed=2, constrained=False), P, ev)
        bad = [i for r in records for i in r.individuals if i.gains.B_y > 100]
        assert all(not i.fitness.feasible for i in bad)

    def test_determinism(self):
        cfg = OptimizerConfig(generations=6, seed=11)
        a, fa = run_optimization(cfg, P, identity_evaluator)
        b, fb = run_optimization(cfg, P, identity_evaluator)
        assert [r.to_dict() for r in a] == [r.to_dict() for r in b]

    def test_resume_is_exact(self):
        cfg = OptimizerConfig(generations=10, seed=4)
        states = {}
        full, front = run_optimization(cfg, P, identity_evaluator,
                                       on_generation=lambda s: states.setdefault(s.generation, s.to_dict()))
        resumed = OptimizationState.from_dict(states[5])
        again, front2 = run_optimization(cfg, P, identity_evaluator, resume=resumed)
        assert [r.to_dict() for r in again] == [r.to_dict() for r in full]
        assert [i.to_dict() for i in front2] == [i.to_dict() for i in front]

    def test_record_stats_recomputable(self):
        records, _ = run_optimization(OptimizerConfig(generations=3, seed=0), P, identity_evaluator)
        for r in records:
            st_ = r.stats()
            arr = r.matrix()
            assert st_["B_y"][0] == pytest.approx(arr[:, 0].mean(), abs=1e-12)
            assert st_["K_y"][1] == pytest.approx(arr[:, 1].std(), abs=1e-12)
            back = GenerationRecord.from_dict(r.to_dict())
            assert back.stats() == st_

    def test_environmental_selection_keeps_front(self):
        pop = [ind(1, 5), ind(5, 1), ind(3, 3), ind(6, 6), ind(7, 7)]
        kept = environmental_selection(pop, 3)
        assert {i.fitness.as_tuple() for i in kept} == {(1, 5), (5, 1), (3, 3)}


class TestHypervolume:
    def test_unit_square(self):
        assert hypervolume_2d([(1, 1)], (2, 2)) == 1.0

    def test_staircase(self):
        assert hypervolume_2d([(1, 3), (2, 2), (3, 1)], (4, 4)) == 6.0

    def test_grid_oracle(self):
        pts = [(1, 3), (2, 2), (3, 1)]
        cells = sum(any(x >= a and y >= b for a, b in pts)
                    for x, y in itertools.product(np.arange(0.5, 4, 1.0), repeat=2))
        assert hypervolume_2d(pts, (4, 4)) == cells

    @given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=15),
           st.tuples(st.floats(0, 10), st.floats(0, 10)))
    def test_dominated_point_changes_nothing(self, pts, extra):
        ref = (11.0, 11.0)
        base = hypervolume_2d(pts, ref)
        dominated = (max(extra[0], pts[0][0]), max(extra[1], pts[0][1]))
        assert hypervolume_2d(pts + [dominated], ref) == pytest.approx(base, abs=1e-9)

    def test_invalid_reference(self):
        with pytest.raises(InvalidReference):
            hypervolume_2d([(3, 1)], (2, 2))
