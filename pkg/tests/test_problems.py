from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fcopt.geometry import DomainError, FeasibleSet, Geometry
from fcopt.problems import (BENCHMARKS, ConfigurationError, Quadratic, aggregate_constants,
                            batch_psi, eval_full, make_benchmark, quadratic_problem,
                            subgradient_eval)
from fcopt.reference import cvar_reference, grid_solve

ALL = [
    ("ball-projection", {}),
    ("nonsmooth-l1", {}),
    ("nonsmooth-l1", {"placement": "subgradient"}),
    ("qcqp-convex", {}),
    ("cvar-toy", {}),
    ("nonconvex-quadratic", {}),
]


def sampled_pairs(p, rng, count=1000):
    return p.X.sample(rng, count), p.X.sample(rng, count)


class TestEvalFull:
    def test_ball_projection_origin(self):
        p = make_benchmark("ball-projection")
        v0, v = eval_full(p, [0.0, 0.0])
        assert v0 == 1.0
        np.testing.assert_allclose(v, [-0.25])

    def test_zero_problem(self):
        g = Geometry(FeasibleSet.box([-1, -1], [1, 1]))
        zero = Quadratic(np.zeros((2, 2)), np.zeros(2))
        p = quadratic_problem(g, zero, [zero])
        v0, v = eval_full(p, [0.4, -0.9])
        assert v0 == 0.0
        np.testing.assert_array_equal(v, [0.0])

    def test_l1_contribution(self):
        p = make_benchmark("nonsmooth-l1", {"a": (0.5, -0.5), "lam": 1.0})
        # a = x, so the quadratic part vanishes and only |x|_1 is left
        v0, _ = eval_full(p, [0.5, -0.5])
        np.testing.assert_allclose(v0, 1.0)

    def test_outside_rejected(self):
        with pytest.raises(DomainError):
            eval_full(make_benchmark("ball-projection"), [2.0, 0.0])

    @pytest.mark.parametrize("name, params", ALL)
    def test_batch_matches_pointwise(self, name, params, rng):
        p = make_benchmark(name, params)
        pts = p.X.sample(rng, 50)
        v0, v = batch_psi(p, pts)
        np.testing.assert_allclose(v0, [p.psi0(x) for x in pts], rtol=1e-12, atol=1e-13)
        np.testing.assert_allclose(v, [p.psi(x) for x in pts], rtol=1e-12, atol=1e-13)


class TestSubgradient:
    def test_minimizer_gradient_is_zero(self):
        p = make_benchmark("ball-projection", {"a": (0.2, 0.1)})
        g0, _ = subgradient_eval(p, [0.2, 0.1])
        np.testing.assert_array_equal(g0, [0.0, 0.0])

    def test_quadratic_constraint_gradient(self):
        p = make_benchmark("ball-projection", {"r": 1.0})
        _, G = subgradient_eval(p, [1.0, 0.0])
        np.testing.assert_array_equal(G, [[2.0], [0.0]])

    def test_abs_kink_gives_zero(self):
        p = make_benchmark("nonsmooth-l1", {"a": (0.0,), "b": (0.0,), "r": 0.5, "lam": 1.0,
                                            "placement": "subgradient"})
        g0, _ = subgradient_eval(p, [0.0])
        np.testing.assert_array_equal(g0, [0.0])

    @pytest.mark.parametrize("name, params", ALL)
    def test_dual_norm_bound(self, name, params, rng):
        p = make_benchmark(name, params)
        for x in p.X.sample(rng, 200):
            _, G = subgradient_eval(p, x)
            assert np.all(np.linalg.norm(G, axis=0) <= p.M_f + 1e-12)


class TestAggregate:
    def _problem(self, M_f, M_chi=(0.0, 0.0)):
        g = Geometry(FeasibleSet.box([-1, -1], [1, 1]))
        q = Quadratic(np.eye(2), np.zeros(2))
        return replace(quadratic_problem(g, q, [q, q]), M_f=np.array(M_f, dtype=float),
                       M_chi=np.array(M_chi, dtype=float))

    def test_pythagorean(self):
        assert aggregate_constants(self._problem([3.0, 4.0])).M_f == 5.0

    def test_zeros(self):
        g = Geometry(FeasibleSet.box([-1, -1], [1, 1]))
        zero = Quadratic(np.zeros((2, 2)), np.zeros(2))
        agg = aggregate_constants(quadratic_problem(g, zero, [zero]))
        assert (agg.M_f, agg.M_chi, agg.H_f, agg.L_f, agg.calM) == (0, 0, 0, 0, 0)

    def test_calM(self):
        agg = aggregate_constants(self._problem([3.0, 4.0], [1.0, 0.0]))
        assert agg.calM == 10.0

    @given(st.lists(st.floats(0, 10), min_size=2, max_size=2), st.integers(0, 1),
           st.floats(0, 5))
    def test_monotone(self, M, i, bump):
        a = aggregate_constants(self._problem(M))
        M2 = list(M)
        M2[i] += bump
        b = aggregate_constants(self._problem(M2))
        assert b.M_f >= a.M_f and b.calM >= a.calM

    def test_negative_constant_rejected(self):
        with pytest.raises(ValueError):
            self._problem([-1.0, 0.0])


class TestConstantValidity:
    """Sampled checks of the declared smoothness, Lipschitz and curvature constants."""

    @pytest.mark.parametrize("name, params", ALL)
    def test_upper_model(self, name, params, rng):
        # f(x2) - f(x1) - <f'(x1), x2 - x1> <= L/2 |d|^2 + H |d|
        p = make_benchmark(name, params)
        X1, X2 = sampled_pairs(p, rng)
        for x1, x2 in zip(X1, X2):
            d = x2 - x1
            nd = np.linalg.norm(d)
            g0, G = subgradient_eval(p, x1)
            lhs0 = p.f0(x2) - p.f0(x1) - g0 @ d
            assert lhs0 <= 0.5 * p.L0 * nd ** 2 + p.H0 * nd + 1e-12
            lhs = np.asarray(p.f(x2)) - np.asarray(p.f(x1)) - G.T @ d
            assert np.all(lhs <= 0.5 * p.L * nd ** 2 + p.H * nd + 1e-12)

    @pytest.mark.parametrize("name, params", ALL)
    def test_lipschitz(self, name, params, rng):
        p = make_benchmark(name, params)
        X1, X2 = sampled_pairs(p, rng)
        for x1, x2 in zip(X1, X2):
            nd = np.linalg.norm(x2 - x1)
            df = np.abs(np.asarray(p.f(x2)) - np.asarray(p.f(x1)))
            assert np.all(df <= p.M_f * nd + 1e-12)
            dchi = np.abs(p.chi_values(x2) - p.chi_values(x1))
            assert np.all(dchi <= p.M_chi * nd + 1e-12)

    @pytest.mark.parametrize("name, params", ALL)
    def test_lower_curvature(self, name, params, rng):
        # f(x2) >= f(x1) + <f'(x1), d> - mu/2 |d|^2 (with mu = 0 this is convexity)
        p = make_benchmark(name, params)
        X1, X2 = sampled_pairs(p, rng)
        for x1, x2 in zip(X1, X2):
            d = x2 - x1
            nd2 = d @ d
            g0, G = subgradient_eval(p, x1)
            assert p.f0(x2) >= p.f0(x1) + g0 @ d - 0.5 * p.mu0 * nd2 - 1e-12
            lin = np.asarray(p.f(x1)) + G.T @ d - 0.5 * p.mu * nd2
            assert np.all(np.asarray(p.f(x2)) >= lin - 1e-12)

    @pytest.mark.parametrize("name, params", [c for c in ALL if c[0] != "nonconvex-quadratic"])
    def test_strong_convexity(self, name, params, rng):
        p = make_benchmark(name, params)
        X1, X2 = sampled_pairs(p, rng, 300)
        for x1, x2 in zip(X1, X2):
            d = x2 - x1
            g0 = subgradient_eval(p, x1)[0] + p.chi0.subgradient(x1)
            assert p.psi0(x2) >= p.psi0(x1) + g0 @ d + 0.5 * p.alpha0 * (d @ d) - 1e-12


class TestBenchmarks:
    def test_ball_projection_optimum(self):
        p = make_benchmark("ball-projection")
        # x* = r a/|a| = (0.353553, 0.353553), psi0* = (1 - 0.353553)^2
        x = np.full(2, 0.5 / np.sqrt(2))
        np.testing.assert_allclose(x, [0.353553, 0.353553], atol=1e-6)
        np.testing.assert_allclose(p.psi0(x), 0.417893, atol=1e-6)

    def test_nonconvex_modulus(self):
        p = make_benchmark("nonconvex-quadratic", {"Q0": [[1.0, 0.0], [0.0, -2.0]]})
        assert p.mu0 == 2.0

    def test_nonconvex_strong_feasibility_guard(self):
        with pytest.raises(ConfigurationError):
            make_benchmark("nonconvex-quadratic", {"d1": 0.5})

    def test_single_scenario_cvar(self):
        p = make_benchmark("cvar-toy", {"xi": [1.0]})
        z = np.linspace(0.0, 3.0, 7)
        # with one scenario the CVaR of the loss is the loss (take t = loss)
        for zz in z:
            loss = 0.5 * (zz - 1.0) ** 2
            np.testing.assert_allclose(p.psi0([zz, loss]), loss)
        g = grid_solve(p, h=1e-2)
        x, v = cvar_reference(p)
        np.testing.assert_allclose(x[0], 1.0, atol=1e-6)
        assert abs(v) <= 1e-12
        np.testing.assert_allclose(g.value, v, atol=2e-2)

    def test_unknown_name(self):
        with pytest.raises(ConfigurationError):
            make_benchmark("nope")

    @pytest.mark.parametrize("name", sorted(BENCHMARKS))
    def test_composite_smooth_flag(self, name):
        p = make_benchmark(name)
        assert p.is_composite_smooth == (p.H0 == 0 and not np.any(p.H > 0))

    def test_convex_flags(self):
        assert make_benchmark("qcqp-convex").is_convex
        assert not make_benchmark("nonconvex-quadratic").is_convex
