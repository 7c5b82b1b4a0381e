"""Rate of the averaged iterate on ball-projection, deterministic and noisy.

Prints max(|gap|, infeas) of the averaged point per budget (seed mean in
the noisy regime) and its fitted log-log slope.

    python demos/ball_projection_rates.py
"""
import numpy as np

from fcopt.conex import ConExParams, run_conex
from fcopt.metrics import RatePoint, loglog_slope, optimality_and_infeasibility
from fcopt.oracles import NoiseConfig
from fcopt.problems import make_benchmark
from fcopt.reference import analytic_ball_projection

BUDGETS = [100, 200, 400, 800, 1600, 3200]
SEEDS = range(8)

p = make_benchmark("ball-projection")
x_star, y_star, v_star = analytic_ball_projection(p.params["a"], p.params["b"], p.params["r"])
B = abs(y_star) + 1.0
print(f"x* = {x_star}, y* = {y_star:.6f}, psi0* = {v_star:.6f}")

for label, cfg in [("deterministic", NoiseConfig()),
                   ("semi-stochastic", NoiseConfig("semi-stochastic", sigma0=1.0))]:
    seeds = [0] if cfg.regime == "deterministic" else SEEDS
    points = []
    print(f"\n{label}")
    print(f"{'T':>6} {'accuracy':>12}")
    for T in BUDGETS:
        acc = []
        for s in seeds:
            r = run_conex(p, cfg, ConExParams(T=T, B=B), seed=s)
            gap, infeas = optimality_and_infeasibility(p, r.x_bar, v_star)
            acc.append(max(abs(gap), infeas))
        points.append(RatePoint(T, float(np.mean(acc)), len(acc)))
        print(f"{T:>6} {points[-1].value:>12.3e}")
    slope, _, r2 = loglog_slope(points)
    print(f"slope {slope:.3f} (r2 {r2:.3f})")
