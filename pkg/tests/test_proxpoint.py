import numpy as np
import pytest

from fcopt.geometry import FeasibleSet, Geometry
from fcopt.problems import ConfigurationError, Quadratic, make_benchmark, quadratic_problem
from fcopt.proxpoint import (PreconditionError, ProxPointError, build_subproblem, draw_k_hat,
                             dual_bound, kkt_residual, local_dual_bound, run_exact_proxpoint,
                             run_inexact_proxpoint, tolerance_schedule, uniform_inner_bound)
from fcopt.reference import analytic_ball_projection, kkt_solve


@pytest.fixture(scope="module")
def nonconvex():
    return make_benchmark("nonconvex-quadratic")


class TestSubproblem:
    def test_shift_at_probe(self):
        p = make_benchmark("nonconvex-quadratic", {"Q0": [[1.0, 0.0], [0.0, -1.0]]})
        assert p.mu0 == 1.0
        sub = build_subproblem(p, [0.0, 0.0]).problem
        # 2 mu0 W((1, 0), 0) = 2 * 0.5 = 1
        np.testing.assert_allclose(sub.f0([1.0, 0.0]), p.f0([1.0, 0.0]) + 1.0, rtol=1e-15)

    def test_zero_shift_at_center(self, nonconvex, rng):
        for c in nonconvex.X.sample(rng, 10):
            sub = build_subproblem(nonconvex, c).problem
            assert sub.f0(c) == nonconvex.f0(c)
            np.testing.assert_array_equal(sub.f(c), nonconvex.f(c))

    def test_convex_constraints_untouched(self):
        p = make_benchmark("ball-projection")
        s = build_subproblem(p, [0.1, 0.1])
        assert not s.shifted_constraints
        assert s.problem.f is p.f

    def test_subproblem_is_strongly_convex(self, nonconvex):
        sub = build_subproblem(nonconvex, [0.2, -0.1]).problem
        assert sub.mu0 == 0.0 and np.all(sub.mu == 0.0)
        assert sub.alpha0 == nonconvex.alpha0 + nonconvex.mu0

    def test_existing_modulus_kept(self):
        g = Geometry(FeasibleSet.box([-1, -1], [1, 1]))
        p = quadratic_problem(g, Quadratic(np.diag([1.0, -0.5]), [0.0, 0.0]), [], alpha0=0.25)
        assert build_subproblem(p, [0.0, 0.0]).problem.alpha0 == 0.25 + p.mu0

    def test_inflated_constants_valid(self, nonconvex, rng):
        # sampled upper model and convexity of every shifted function
        sub = build_subproblem(nonconvex, [0.3, -0.4]).problem
        X1, X2 = nonconvex.X.sample(rng, 500), nonconvex.X.sample(rng, 500)
        for x1, x2 in zip(X1, X2):
            d = x2 - x1
            nd2 = d @ d
            lin0 = sub.f0(x1) + sub.f0_grad(x1) @ d
            assert lin0 + 0.5 * sub.alpha0 * nd2 - 1e-12 <= sub.f0(x2)
            assert sub.f0(x2) <= lin0 + 0.5 * sub.L0 * nd2 + 1e-12
            lin = np.asarray(sub.f(x1)) + sub.f_jac(x1).T @ d
            assert np.all(lin - 1e-12 <= np.asarray(sub.f(x2)))
            assert np.all(np.asarray(sub.f(x2)) <= lin + 0.5 * sub.L * nd2 + 1e-12)
            assert np.all(np.abs(np.asarray(sub.f(x2)) - np.asarray(sub.f(x1)))
                          <= sub.M_f * np.sqrt(nd2) + 1e-12)

    def test_center_outside(self, nonconvex):
        with pytest.raises(PreconditionError):
            build_subproblem(nonconvex, [2.0, 0.0])


class TestKKTResidual:
    def test_ball_projection_analytic(self):
        p = make_benchmark("ball-projection")
        x, y, _ = analytic_ball_projection(p.params["a"], p.params["b"], p.params["r"])
        r = kkt_residual(p, x, [y])
        assert max(r.feasibility, r.complementarity, r.stationarity) <= 1e-9
        assert r.passes(1e-9)

    def test_interior_nonstationary(self):
        p = make_benchmark("ball-projection")
        r = kkt_residual(p, [0.0, 0.0], [0.0])
        # gradient (0 - 1, 0 - 1) at an interior point
        np.testing.assert_allclose(r.stationarity, np.sqrt(2.0))
        assert r.feasibility == 0.0 and r.complementarity == 0.0

    def test_complementarity_counts_slack(self):
        p = make_benchmark("ball-projection")
        r = kkt_residual(p, [0.0, 0.0], [2.0])
        np.testing.assert_allclose(r.complementarity, 2.0 * 0.25)

    def test_box_face_absorbs_gradient(self):
        g = Geometry(FeasibleSet.box([0.0], [1.0]))
        p = quadratic_problem(g, Quadratic([[1.0]], [-3.0]), [])
        assert kkt_residual(p, [1.0], None).stationarity == 0.0

    def test_negative_multiplier(self):
        with pytest.raises(PreconditionError):
            kkt_residual(make_benchmark("ball-projection"), [0.0, 0.0], [-1.0])


class TestDualBound:
    def test_certified_value(self, nonconvex):
        x = nonconvex.X.centroid()
        D2 = nonconvex.geometry.diameter() ** 2
        cert = dual_bound(nonconvex, x, -1.0)
        expected = (nonconvex.psi0(x) + 1.0 + nonconvex.mu0 * D2) / (nonconvex.mu[0] * D2)
        assert cert.kind == "certified"
        np.testing.assert_allclose(cert.B, expected, rtol=1e-15)

    def test_two_when_gap_matches(self):
        # psi0(x) - psi0* = mu0 D^2 and mu_min = mu0 gives B = 2
        p = make_benchmark("nonconvex-quadratic", {"Q1": [[0.0, 0.0], [0.0, -2.0]],
                                                   "d1": 100.0})
        x = p.X.centroid()
        D2 = p.geometry.diameter() ** 2
        cert = dual_bound(p, x, p.psi0(x) - p.mu0 * D2)
        assert p.mu[0] == p.mu0
        np.testing.assert_allclose(cert.B, 2.0, rtol=1e-14)

    def test_failure_names_constraint(self, nonconvex):
        # a point near the curved constraint cannot certify
        x = kkt_solve(nonconvex, nonconvex.X.centroid()).x
        cert = dual_bound(nonconvex, x, -10.0)
        assert cert.kind == "failed" and cert.violating == 0 and not cert.certified

    def test_slater_when_convex(self):
        p = make_benchmark("ball-projection")
        cert = dual_bound(p, [0.0, 0.0], 0.0)
        assert cert.kind == "slater" and cert.certified


class TestLocalDualBound:
    def test_example(self):
        assert local_dual_bound(1.0, 0.9, [-0.5]) == pytest.approx(0.2, rel=1e-15)

    def test_no_progress(self):
        assert local_dual_bound(0.4, 0.4, [-0.1, -0.3]) == 0.0

    def test_infeasible_previous(self):
        with pytest.raises(PreconditionError):
            local_dual_bound(1.0, 0.5, [0.0])


class TestToleranceSchedule:
    def test_constants(self):
        s = tolerance_schedule(1e-2, B=1.0, L_omega=1.0, mu0=1.0, mu_max=1.0, c=1.0)
        assert (s.c1, s.c2) == (16.0, 2.0)
        np.testing.assert_allclose(s.delta_bar, 1e-2 / 64, rtol=1e-15)
        assert s.delta == s.delta_bar
        np.testing.assert_allclose(s.eps_bar, 2e-2 / 16)

    def test_outer_count_doubles(self):
        a = tolerance_schedule(1e-2, 1.0, delta_psi0=1.0)
        b = tolerance_schedule(5e-3, 1.0, delta_psi0=1.0)
        assert a.K == 3200 and b.K == 6400

    def test_eps_positive(self):
        with pytest.raises(ConfigurationError):
            tolerance_schedule(0.0, 1.0)


class TestExactProxPoint:
    def test_stationary_start_stops(self):
        p = make_benchmark("nonconvex-quadratic", {"Q0": [[1.0, 0.0], [0.0, -2.0]],
                                                   "c0": [-0.2, 0.4]})
        x0 = np.array([0.2, 0.2])
        tr = run_exact_proxpoint(p, x0, 10)
        assert tr.stopped_early and tr.K == 1
        np.testing.assert_allclose(tr.xs[1], x0, atol=1e-10)
        assert tr.kkt_series()[0] <= 1e-12

    def test_convex_one_step(self):
        p = make_benchmark("ball-projection")
        x_star, _, v = analytic_ball_projection(p.params["a"], p.params["b"], p.params["r"])
        tr = run_exact_proxpoint(p, [0.0, 0.0], 3)
        np.testing.assert_allclose(tr.xs[1], x_star, atol=1e-8)
        assert np.all(np.diff(tr.psi0) <= 1e-12)

    def test_monotone_and_feasible(self, nonconvex):
        tr = run_exact_proxpoint(nonconvex, nonconvex.X.centroid(), 20)
        assert np.all(np.diff(tr.psi0) <= 1e-12)
        assert np.all(tr.psi < 0)
        steps = (np.diff(tr.xs, axis=0) ** 2).sum()
        assert steps <= 2.0 / (3.0 * nonconvex.mu0) * (tr.psi0[0] - tr.psi0[-1]) + 1e-12

    def test_local_dual_bound(self, nonconvex):
        tr = run_exact_proxpoint(nonconvex, nonconvex.X.centroid(), 10)
        for k in range(1, tr.K + 1):
            b = local_dual_bound(tr.psi0[k - 1], tr.psi0[k], tr.psi[k - 1])
            assert np.abs(tr.ys[k - 1]).sum() <= b + 1e-9

    def test_infeasible_start(self, nonconvex):
        with pytest.raises(PreconditionError):
            run_exact_proxpoint(nonconvex, [0.0, 1.0], 3)

    def test_unknown_solver(self, nonconvex):
        with pytest.raises(ConfigurationError):
            run_exact_proxpoint(nonconvex, nonconvex.X.centroid(), 1, solver="newton")


@pytest.fixture(scope="module")
def setup():
    p = make_benchmark("nonconvex-quadratic")
    ref = kkt_solve(p, p.X.centroid())
    return p, p.X.centroid(), ref


class TestInexactProxPoint:
    def test_single_step_output(self, setup):
        p, x0, ref = setup
        tr = run_inexact_proxpoint(p, x0, 1, (1e-3, 1e-3), psi0_lower=ref.value, max_T=2000)
        assert tr.k_hat == 1 and tr.K == 1

    def test_k_hat_depends_on_seed_only(self):
        draws = [draw_k_hat(s, 16) for s in range(200)]
        assert draws == [draw_k_hat(s, 16) for s in range(200)]
        assert min(draws) == 1 and max(draws) == 16

    def test_stops_at_k_hat_on_shared_path(self, setup):
        p, x0, ref = setup
        bound = uniform_inner_bound(p, ref.value)
        full = run_inexact_proxpoint(p, x0, 6, (1e-4, 1e-4), seed=0, bound=bound,
                                     stop_at_k_hat=False, max_T=3000)
        for seed in (1, 2, 3):
            tr = run_inexact_proxpoint(p, x0, 6, (1e-4, 1e-4), seed=seed, bound=bound,
                                       max_T=3000)
            k = tr.k_hat
            assert tr.K == k
            # deterministic inner solves: same path up to k_hat
            np.testing.assert_array_equal(tr.xs[k], full.xs[k])

    def test_matches_exact_path(self, setup):
        # tight inner accuracy, count capped (the uncapped count is ~4e7 per step)
        p, x0, ref = setup
        K = 4
        inexact = run_inexact_proxpoint(p, x0, K, (1e-10, 1e-10), seed=3, psi0_lower=ref.value,
                                        output="last", stop_at_k_hat=False, max_T=50000)
        exact = run_exact_proxpoint(p, x0, K)
        np.testing.assert_allclose(inexact.psi0, exact.psi0, atol=1e-6)
        np.testing.assert_allclose(inexact.xs, exact.xs, atol=1e-6)

    def test_needs_bound(self, setup):
        p, x0, _ = setup
        with pytest.raises(ConfigurationError):
            run_inexact_proxpoint(p, x0, 2, (1e-3, 1e-3))

    def test_tolerances_positive(self, setup):
        p, x0, ref = setup
        with pytest.raises(ConfigurationError):
            run_inexact_proxpoint(p, x0, 2, (0.0, 1e-3), psi0_lower=ref.value)

    def test_inner_failure_reports_step(self, setup):
        p, x0, _ = setup
        with pytest.raises(ProxPointError) as info:
            run_inexact_proxpoint(p, x0, 2, (1e-3, 1e-3), bound=(0.5, 1.0), max_T=10)
        assert info.value.k == 1
