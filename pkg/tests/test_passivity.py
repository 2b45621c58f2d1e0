import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
import sympy as sp
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from passopt.model import BENCHMARK_GAINS, ImpedanceGains, SystemParams, impedance_tf
from passopt.passivity import (
    EmptyTrace,
    FrequencyGrid,
    GridTooCoarse,
    ZWidthCurve,
    _golden_min,
    boundary_damping,
    energy_observer,
    impedance_poles,
    is_passive,
    positive_real_sweep,
    stability_condition,
    sufficient_criterion,
    sufficient_margin,
    z_width_boundary,
)

from conftest import gains_st, log_uniform, params_st


def real_part_numerator():
    """Coefficients (in w^2) of the numerator of Re Z(jw), derived symbolically."""
    w = sp.symbols("w", positive=True)
    J, k, P, D, B, K = sp.symbols("J k P D B K", positive=True)
    s = sp.I * w
    num = (J * s**2 + (D * s + P) * k) * (B * s + K)
    den = s * (D * k * s**2 + (B + P * k) * s + K)
    re = sp.together(sp.re(sp.expand(num * sp.conjugate(den))))
    poly = sp.Poly(sp.expand(re), w)
    return poly, (J, k, P, D, B, K, w)


def test_real_part_numerator_structure():
    poly, (J, k, P, D, B, K, w) = real_part_numerator()
    expected = w**2 * k * (B * D * J * w**4 + (B**2 * D + K * (J * P - D**2 * k)) * w**2
                           + K * (D * K - P**2 * k))
    assert sp.expand(poly.as_expr() - expected) == 0


class TestPoles:
    def test_benchmark(self, params):
        p = impedance_poles(params, BENCHMARK_GAINS)
        assert p[0] == 0
        assert p[1].real == pytest.approx(-0.8437, abs=1e-4)
        assert p[2].real == pytest.approx(-67.73, abs=1e-2)

    def test_small_stiffness_pole_approaches_origin(self, params):
        _, s2, _ = impedance_poles(params, ImpedanceGains(50.0, 1e-12))
        assert abs(s2) < 1e-12

    def test_complex_pair(self):
        p = SystemParams(P=0.1, D=1.0, k_r=1.0)
        _, s2, s3 = impedance_poles(p, ImpedanceGains(0.1, 100.0))
        assert s2.imag != 0 and s2 == pytest.approx(s3.conjugate())

    @given(params_st, gains_st)
    def test_roots_of_denominator(self, p, g):
        den = impedance_tf(p, g).den
        scale = max(abs(c) for c in den)
        for r in impedance_poles(p, g):
            val = sum(c * r**i for i, c in enumerate(den))
            mag = max(abs(c * r**i) for i, c in enumerate(den))
            assert abs(val) <= 1e-8 * max(scale, mag)
        assert all(r.real < 0 for r in impedance_poles(p, g)[1:])


class TestStability:
    @given(params_st, gains_st)
    def test_positive_gains_are_stable(self, p, g):
        assert stability_condition(p, g)

    def test_extreme_gains(self, params):
        assert stability_condition(params, ImpedanceGains(1e-6, 1e6))


class TestSufficientCriterion:
    def test_benchmark_margin(self, params):
        assert sufficient_margin(params, BENCHMARK_GAINS) == pytest.approx(1172.5, rel=1e-12)
        assert sufficient_criterion(params, BENCHMARK_GAINS)

    def test_violating_margin(self, params):
        g = ImpedanceGains(0.1, 100.0)
        assert float(sufficient_margin(params, g)) == pytest.approx(-77.495, rel=1e-12)
        assert not sufficient_criterion(params, g)

    def test_tiny_stiffness(self, params):
        assert sufficient_criterion(params, ImpedanceGains(0.01, 1e-9))

    def test_exact_at_the_boundary(self):
        # margin is exactly zero: 1^2 * 1 + 1 * (1*1 - 1*2) = 0
        p = SystemParams(J=1.0, k_r=2.0, P=1.0, D=1.0)
        assert sufficient_margin(p, ImpedanceGains(1.0, 1.0)) == 0
        assert not sufficient_criterion(p, ImpedanceGains(1.0, 1.0))


class TestSweep:
    def test_low_frequency_limit(self, params):
        # Re Z(j0+) = k_r (D K_y - P^2 k_r) / K_y from the symbolic numerator
        g = BENCHMARK_GAINS
        res = positive_real_sweep(params, g)
        limit = params.k_r * (params.D * g.K_y - params.P**2 * params.k_r) / g.K_y
        assert res.worst_frequency == pytest.approx(1e-3)
        assert res.worst_real_part == pytest.approx(limit, rel=1e-4)
        assert not res.positive_real

    def test_violating_gains(self, params):
        res = positive_real_sweep(params, ImpedanceGains(0.1, 100.0))
        assert not res.positive_real and res.worst_real_part < 0

    def test_positive_real_when_every_coefficient_nonnegative(self):
        # large P and stiffness above P^2 k_r / D: all numerator terms >= 0
        p = SystemParams(J=0.005, k_r=3.5, P=200.0, D=0.5)
        g = ImpedanceGains(5.0, 3e5)
        res = positive_real_sweep(p, g)
        assert res.positive_real
        assert res.worst_real_part >= 0

    def test_refinement_never_worse_than_grid(self, params):
        res = positive_real_sweep(params, ImpedanceGains(0.1, 100.0))
        assert res.worst_real_part <= res.grid_min_real_part

    def test_interior_minimum_is_refined(self):
        # with a stiff enough spring the minimum moves off the grid edge
        p = SystemParams(J=0.005, k_r=3.5, P=20.0, D=0.5)
        g = ImpedanceGains(0.5, 5000.0)
        res = positive_real_sweep(p, g, FrequencyGrid(1e-3, 1e5, 50))
        fine = positive_real_sweep(p, g, FrequencyGrid(1e-3, 1e5, 200000))
        assert 1e-3 < res.worst_frequency < 1e5
        assert res.worst_real_part == pytest.approx(fine.worst_real_part, rel=1e-6)

    @settings(max_examples=50)
    @given(gains_st)
    def test_sweep_sign_matches_symbolic_coefficients(self, g):
        # positive real on the grid <=> the numerator polynomial stays >= 0 there
        p = SystemParams()
        res = positive_real_sweep(p, g)
        w = FrequencyGrid().points()
        x = w**2
        num = p.k_r * (g.B_y * p.D * p.J * x**2
                       + (g.B_y**2 * p.D + g.K_y * (p.J * p.P - p.D**2 * p.k_r)) * x
                       + g.K_y * (p.D * g.K_y - p.P**2 * p.k_r))
        den = (g.K_y - p.D * p.k_r * x) ** 2 + (g.B_y + p.P * p.k_r) ** 2 * x
        assert res.grid_min_real_part == pytest.approx((num / den).min(), rel=1e-6, abs=1e-9)

    @given(params_st, gains_st)
    def test_full_positivity_condition(self, p, g):
        # both the w^2 and constant coefficients nonnegative => positive real
        assume(sufficient_criterion(p, g) and p.D * g.K_y >= p.P**2 * p.k_r)
        assert positive_real_sweep(p, g).positive_real

    def test_golden_section_gives_up(self):
        with pytest.raises(GridTooCoarse):
            _golden_min(lambda x: x * x, -1.0, 1.0, max_iter=3)

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            FrequencyGrid(0.0, 1.0)
        with pytest.raises(ValueError):
            FrequencyGrid(1.0, 10.0, 2)


class TestZWidth:
    def test_benchmark_stiffness(self, params):
        assert boundary_damping(params, 100.0) == pytest.approx(math.sqrt(155.0), rel=1e-14)

    def test_curve_satisfies_equality(self, params):
        curve = z_width_boundary(params, 1.0, 500.0, n=200)
        for k, b in zip(curve.stiffness, curve.damping):
            margin = b * b * params.D + k * (params.J * params.P - params.D**2 * params.k_r)
            assert abs(margin) <= 1e-9
            assert sufficient_criterion(params, ImpedanceGains(b + 1e-9, k))

    def test_large_position_gain_gives_zero_boundary(self):
        p = SystemParams(P=200.0)
        assert p.J * p.P >= p.D**2 * p.k_r
        assert np.all(z_width_boundary(p, 1.0, 500.0, 50).damping == 0)

    @given(log_uniform(1e-2, 1e4))
    def test_square_root_scaling(self, k):
        p = SystemParams()
        assert boundary_damping(p, 4 * k) == pytest.approx(2 * boundary_damping(p, k), rel=1e-14)

    @given(st.floats(1.01, 5.0))
    def test_increasing_P_lowers_boundary(self, factor):
        p = SystemParams()
        lo = z_width_boundary(p, 1.0, 500.0, 100).damping
        hi = z_width_boundary(replace(p, P=p.P * factor), 1.0, 500.0, 100).damping
        assert np.all(hi < lo) or np.all(hi == 0)

    @given(st.floats(1.01, 5.0))
    def test_increasing_D_raises_boundary(self, factor):
        p = SystemParams()
        lo = z_width_boundary(p, 1.0, 500.0, 100).damping
        hi = z_width_boundary(replace(p, D=p.D * factor), 1.0, 500.0, 100).damping
        assert np.all(hi > lo)

    def test_log_spacing(self, params):
        curve = z_width_boundary(params, 1.0, 1000.0, n=4, spacing="log")
        np.testing.assert_allclose(curve.stiffness, [1, 10, 100, 1000])

    def test_csv_round_trip(self, params, tmp_path):
        curve = z_width_boundary(params, 0.3, 700.0, n=37)
        back = ZWidthCurve.from_csv(curve.to_csv(tmp_path / "z.csv"))
        assert np.array_equal(back.stiffness, curve.stiffness)
        assert np.array_equal(back.damping, curve.damping)

    def test_invalid_inputs(self, params):
        with pytest.raises(ValueError):
            z_width_boundary(params, 5.0, 1.0)
        with pytest.raises(ValueError):
            z_width_boundary(params, 1.0, 5.0, n=1)
        with pytest.raises(ValueError):
            ZWidthCurve(np.array([2.0, 1.0]), np.array([0.0, 0.0]))


class TestIsPassive:
    def test_benchmark(self, params):
        v = is_passive(params, BENCHMARK_GAINS)
        assert v.stable and v.sufficient_criterion and v.constraint_satisfied
        # the low-frequency term makes Re Z negative near DC
        assert v.positive_real is False

    def test_violating(self, params):
        v = is_passive(params, ImpedanceGains(0.1, 100.0))
        assert v.stable and not v.sufficient_criterion and v.positive_real is False
        assert not v.constraint_satisfied

    def test_without_sweep(self, params):
        v = is_passive(params, ImpedanceGains(5.0, 1e-3), sweep=False)
        assert v.constraint_satisfied and v.positive_real is None


class TestEnergyObserver:
    def trace(self, tau, qdot, dt):
        return SimpleNamespace(tau_e=np.asarray(tau), qdot=np.asarray(qdot), dt=dt)

    def test_zero_torque(self):
        e, beta = energy_observer(self.trace(np.zeros(100), np.ones(100), 1e-3))
        assert np.all(e == 0) and beta == 0

    def test_sine_squared(self):
        n = 6283  # dt ~ 1e-3 over one period
        t = np.linspace(0.0, 2 * np.pi, n + 1)
        e, beta = energy_observer(self.trace(np.sin(t), np.sin(t), t[1] - t[0]))
        assert e[-1] == pytest.approx(np.pi, abs=1e-9)
        assert beta == 0

    def test_negative_energy(self):
        e, beta = energy_observer(self.trace([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0], 0.5))
        assert beta == pytest.approx(1.0)

    def test_empty(self):
        with pytest.raises(EmptyTrace):
            energy_observer(self.trace([], [], 1e-3))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            energy_observer(self.trace([1.0], [1.0, 2.0], 1e-3))
