"""Optimality and feasibility measures, the primal-dual gap function, and
log-log slope fitting for rate experiments."""
from dataclasses import dataclass

import numpy as np

CLIP = 1e-16


@dataclass(frozen=True)
class RatePoint:
    """One point of a rate curve. ``stderr`` and ``seeds`` are set for
    curves averaged over several seeds."""
    T: int
    value: float
    seeds: int = 1
    stderr: float = 0.0

    @property
    def clipped(self):
        return self.value <= 0.0


def optimality_and_infeasibility(p, x, psi0_star):
    """(psi_0(x) - psi_0*, ||[psi(x)]_+||_2); the gap may be negative."""
    x = np.asarray(x, dtype=float)
    gap = p.psi0(x) - psi0_star
    infeas = float(np.linalg.norm(np.maximum(p.psi(x), 0.0))) if p.m else 0.0
    return gap, infeas


def lagrangian(p, x, y):
    x = np.asarray(x, dtype=float)
    val = p.psi0(x)
    if p.m:
        val += float(np.asarray(y, dtype=float) @ p.psi(x))
    return val


def gap_function(p, z, zbar):
    """Q(z, zbar) = L(x, ybar) - L(xbar, y) for z = (x, y), zbar = (xbar, ybar)."""
    x, y = z
    xb, yb = zbar
    if np.any(np.asarray(y) < 0) or np.any(np.asarray(yb) < 0):
        raise ValueError("dual points must be nonnegative")
    return lagrangian(p, x, yb) - lagrangian(p, xb, y)


def mean_curve(budgets, values):
    """Average a (len(budgets), seeds) array into RatePoints with stderr."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    k = values.shape[1]
    se = values.std(axis=1, ddof=1) / np.sqrt(k) if k > 1 else np.zeros(len(budgets))
    return [RatePoint(int(T), float(v), k, float(s))
            for T, v, s in zip(budgets, values.mean(axis=1), se)]


def loglog_slope(points):
    """Least-squares fit of ln(value) on ln(T).

    Returns (slope, intercept, r2). Nonpositive values are clipped to 1e-16.
    """
    if len(points) < 4:
        raise ValueError("at least 4 points are needed for a slope fit")
    T = np.array([pt.T for pt in points], dtype=float)
    if np.any(np.diff(T) <= 0):
        raise ValueError("budgets must be strictly increasing")
    v = np.array([max(pt.value, CLIP) for pt in points])
    lx, ly = np.log(T), np.log(v)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2
