import numpy as np
import pytest
from hypothesis import given, strategies as st

from fcopt.metrics import (RatePoint, gap_function, lagrangian, loglog_slope, mean_curve,
                           optimality_and_infeasibility)
from fcopt.problems import make_benchmark
from fcopt.reference import analytic_ball_projection

BUDGETS = [100, 200, 400, 800, 1600, 3200]


@pytest.fixture(scope="module")
def ball():
    p = make_benchmark("ball-projection")
    return p, analytic_ball_projection(p.params["a"], p.params["b"], p.params["r"])


class TestOptimality:
    def test_origin(self, ball):
        p, (_, _, v) = ball
        gap, infeas = optimality_and_infeasibility(p, [0.0, 0.0], v)
        np.testing.assert_allclose(gap, 0.582107, atol=1e-6)
        assert infeas == 0.0

    def test_optimum(self, ball):
        p, (x, _, v) = ball
        gap, infeas = optimality_and_infeasibility(p, x, v)
        assert abs(gap) <= 1e-15 and infeas <= 1e-15

    def test_infeasible_point(self, ball):
        p, (_, _, v) = ball
        gap, infeas = optimality_and_infeasibility(p, [0.9, 0.9], v)
        assert gap < 0
        np.testing.assert_allclose(infeas, 1.62 - 0.25)


class TestGapFunction:
    def test_zero_at_saddle(self, ball):
        p, (x, y, _) = ball
        z = (x, [y])
        assert abs(gap_function(p, z, z)) <= 1e-15

    def test_example(self, ball):
        p, _ = ball
        # L((0,0), 1) - L((0,0), 0) = psi(0) = -0.25
        np.testing.assert_allclose(gap_function(p, ([0.0, 0.0], [0.0]), ([0.0, 0.0], [1.0])),
                                   -0.25)

    def test_saddle_sign(self, ball, rng):
        p, (x, y, _) = ball
        xs = p.X.sample(rng, 100)
        ys = rng.uniform(0.0, 3.0, size=(100, 1))
        for xx, yy in zip(xs, ys):
            assert gap_function(p, (xx, yy), (x, [y])) >= -1e-14

    def test_negative_dual(self, ball):
        p, _ = ball
        with pytest.raises(ValueError):
            gap_function(p, ([0.0, 0.0], [-1.0]), ([0.0, 0.0], [0.0]))

    def test_lagrangian(self, ball):
        p, _ = ball
        np.testing.assert_allclose(lagrangian(p, [0.0, 0.0], [2.0]), 1.0 - 0.5)


class TestSlope:
    @pytest.mark.parametrize("power", [-1.0, -2.0, -0.5])
    def test_exact_power(self, power):
        slope, _, r2 = loglog_slope([RatePoint(T, 3.0 * T ** power) for T in BUDGETS])
        np.testing.assert_allclose(slope, power, rtol=1e-12)
        np.testing.assert_allclose(r2, 1.0)

    def test_noisy_sqrt(self, rng):
        pts = [RatePoint(T, T ** -0.5 * np.exp(0.05 * rng.normal())) for T in BUDGETS]
        slope, _, _ = loglog_slope(pts)
        assert -0.6 <= slope <= -0.4

    @given(st.floats(1e-6, 1e6))
    def test_scale_invariant(self, c):
        base = [RatePoint(T, T ** -1.3) for T in BUDGETS]
        scaled = [RatePoint(T, c * T ** -1.3) for T in BUDGETS]
        np.testing.assert_allclose(loglog_slope(scaled)[0], loglog_slope(base)[0], rtol=1e-9)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            loglog_slope([RatePoint(T, 1.0 / T) for T in BUDGETS[:3]])

    def test_unsorted_budgets(self):
        with pytest.raises(ValueError):
            loglog_slope([RatePoint(T, 1.0) for T in [100, 400, 200, 800]])

    def test_clipping(self):
        slope, _, _ = loglog_slope([RatePoint(T, 0.0) for T in BUDGETS])
        assert abs(slope) <= 1e-12


class TestMeanCurve:
    def test_mean_and_stderr(self):
        pts = mean_curve([10, 20], [[1.0, 3.0], [2.0, 2.0]])
        assert [pt.value for pt in pts] == [2.0, 2.0]
        np.testing.assert_allclose(pts[0].stderr, np.sqrt(2.0) / np.sqrt(2.0))
        assert pts[1].stderr == 0.0 and pts[0].seeds == 2

    def test_single_seed(self):
        pts = mean_curve([10, 20, 40], [0.5, 0.25, 0.125])
        assert all(pt.stderr == 0.0 and pt.seeds == 1 for pt in pts)
