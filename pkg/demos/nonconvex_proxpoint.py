"""Exact and inexact proximal point on the default nonconvex quadratic.

The exact loop solves each shifted subproblem with the reference solver;
the inexact loop uses the primal-dual engine with a capped inner budget.
Both start at the centre of the box.

    python demos/nonconvex_proxpoint.py
"""
import numpy as np

from fcopt.problems import make_benchmark
from fcopt.proxpoint import run_exact_proxpoint, run_inexact_proxpoint, uniform_inner_bound
from fcopt.reference import kkt_solve

p = make_benchmark("nonconvex-quadratic")
x0 = p.X.centroid()
ref = kkt_solve(p, x0)
print(f"stationary point {ref.x}, psi0 = {ref.value:.6f}, y = {ref.y}")
print(f"dual bound certified at the centre: B = {uniform_inner_bound(p, ref.value)[1]:.3f}")

exact = run_exact_proxpoint(p, x0, 64)
series = exact.kkt_series()
for k in (1, 4, 16, 64):
    print(f"k = {k:>3}: psi0 = {exact.psi0[k]:.8f}, stationarity^2 + complementarity = "
          f"{series[k - 1]:.3e}")

inexact = run_inexact_proxpoint(p, x0, 8, (1e-6, 1e-6), seed=1, psi0_lower=ref.value,
                                stop_at_k_hat=False, max_T=20000)
gap = np.abs(inexact.xs - exact.xs[:9]).max()
print(f"\ninexact, 8 outer steps with {inexact.inner_T[0]} inner iterations each: "
      f"max distance to the exact path {gap:.2e}, output index {inexact.k_hat}")
