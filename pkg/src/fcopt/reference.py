"""Independent ground-truth solvers: brute-force grids, closed forms, and a
small smooth-NLP solver used where near machine precision is needed.

Nothing in here calls the primal-dual engine, so it can be used to check it.
"""
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, minimize_scalar, nnls

from .geometry import project_feasible
from .problems import batch_psi

GRID_POINT_LIMIT = 10 ** 8


class GridTooLargeError(ValueError):
    pass


class EmptyFeasibleGridError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned grid. Points are lower + k*h, with upper appended when
    it is not hit exactly, so box faces always carry grid points."""
    lower: tuple
    upper: tuple
    h: float
    slack: float = None

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("grid step must be positive")

    def axes(self):
        out = []
        for lo, hi in zip(self.lower, self.upper):
            k = int(np.floor((hi - lo) / self.h + 1e-9))
            ax = lo + self.h * np.arange(k + 1)
            if hi - ax[-1] > 1e-12 * max(1.0, abs(hi)):
                ax = np.append(ax, hi)
            out.append(ax)
        return out

    def size(self):
        return int(np.prod([len(a) for a in self.axes()], dtype=float))


@dataclass(frozen=True)
class GridResult:
    x: np.ndarray
    value: float
    infeasibility: float
    lipschitz_estimate: float
    error_bound: float


def grid_spec_for(p, h, slack=None):
    X = p.X
    if X.kind == "box":
        return GridSpec(tuple(X.lower), tuple(X.upper), h, slack)
    if X.kind == "ball":
        return GridSpec(tuple(X.center - X.radius), tuple(X.center + X.radius), h, slack)
    return GridSpec((0.0,) * X.n, (1.0,) * X.n, h, slack)


def grid_solve(p, spec=None, h=None, chunk=200_000):
    """Exhaustive minimum of psi_0 over grid points of X with ||[psi]_+|| <= slack.

    The default slack is h*M_f*sqrt(n)/2: every feasible point has a grid
    point within the covering radius h*sqrt(n)/2, and that point violates the
    constraints by at most M_f times the radius, so the filter never empties
    a nonempty feasible set.
    """
    if spec is None:
        spec = grid_spec_for(p, h)
    if p.n > 3:
        raise ValueError("grid_solve supports n <= 3")
    if spec.size() > GRID_POINT_LIMIT:
        raise GridTooLargeError(f"grid has {spec.size():.3g} points (limit 1e8)")
    slack = spec.slack
    if slack is None:
        slack = 0.5 * spec.h * np.sqrt(p.n) * float(np.linalg.norm(p.M_f)) if p.m else 0.0
    axes = spec.axes()
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([g.ravel() for g in mesh])
    if p.X.kind != "box":
        keep = np.array([p.X.contains(q, tol=1e-12) for q in pts]) if p.X.kind == "simplex" \
            else np.linalg.norm(pts - p.X.center, axis=1) <= p.X.radius
        pts = pts[keep]
    vals = np.empty(len(pts))
    viol = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        v0, v = batch_psi(p, pts[s:s + chunk])
        vals[s:s + chunk] = v0
        viol[s:s + chunk] = np.linalg.norm(np.maximum(v, 0.0), axis=1) if p.m else 0.0
    ok = viol <= slack
    if not np.any(ok):
        raise EmptyFeasibleGridError("no grid point satisfies the constraints")
    idx = np.flatnonzero(ok)[np.argmin(vals[ok])]
    lip = 0.0
    if p.X.kind == "box":
        grid_vals = vals.reshape(mesh[0].shape)
        for ax, a in enumerate(axes):
            if len(a) > 1:
                d = np.abs(np.diff(grid_vals, axis=ax)) / np.diff(a).reshape(
                    [-1 if k == ax else 1 for k in range(p.n)])
                lip = max(lip, float(d.max()))
    return GridResult(x=pts[idx], value=float(vals[idx]), infeasibility=float(viol[idx]),
                      lipschitz_estimate=lip, error_bound=lip * spec.h * np.sqrt(p.n))


def analytic_ball_projection(a, b, r):
    """KKT triple of min 0.5||x-a||^2 s.t. ||x-b||^2 <= r^2 (box not binding).

    Returns (x*, y*, psi_0*). When a already lies in the ball the multiplier
    is zero and x* = a.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dist = np.linalg.norm(a - b)
    if dist <= r:
        return a.copy(), 0.0, 0.0
    x = b + r * (a - b) / dist
    # (x - a) + 2 y (x - b) = 0 along the ray gives y = (dist/r - 1)/2
    y = (dist / r - 1.0) / 2.0
    return x, y, 0.5 * float((x - a) @ (x - a))


def analytic_l1_ball(a, r, lam):
    """KKT triple of min 0.5||x-a||^2 + lam||x||_1 s.t. ||x||^2 <= r^2."""
    a = np.asarray(a, dtype=float)
    s = np.sign(a) * np.maximum(np.abs(a) - lam, 0.0)
    ns = np.linalg.norm(s)
    y = 0.0 if ns <= r else (ns / r - 1.0) / 2.0
    x = s / (1.0 + 2.0 * y)
    val = 0.5 * float((x - a) @ (x - a)) + lam * float(np.abs(x).sum())
    return x, y, val


def projected_subgradient_baseline(p, T, B=1.0, x0=None, rho=None):
    """Normalized projected subgradient on psi_0 + rho*||[psi]_+||_2, rho = 2B.

    Returns the iterate with the smallest penalized value seen.
    """
    X = p.X
    x = X.centroid() if x0 is None else np.asarray(x0, dtype=float)
    if T <= 0:
        return x.copy()
    rho = 2.0 * B if rho is None else rho
    D = p.geometry.diameter()

    def penalized(z):
        v = np.maximum(p.psi(z), 0.0)
        return p.psi0(z) + rho * float(np.linalg.norm(v)), v

    best_x, (best_val, _) = x.copy(), penalized(x)
    for t in range(T):
        val, v = penalized(x)
        if val < best_val:
            best_x, best_val = x.copy(), val
        g = np.asarray(p.f0_grad(x), dtype=float) + p.chi0.subgradient(x)
        nv = np.linalg.norm(v)
        if rho > 0 and nv > 0:
            J = np.asarray(p.f_jac(x), dtype=float).reshape(p.n, p.m)
            Jc = J + np.column_stack([c.subgradient(x) for c in p.chis])
            g = g + rho * Jc @ (v / nv)
        ng = np.linalg.norm(g)
        if ng == 0.0:
            break
        x = project_feasible(X, x - (D / np.sqrt(t + 1.0)) * g / ng)
    val, _ = penalized(x)
    return x if val < best_val else best_x


# ---------------------------------------------------------------------------
# smooth reference NLP solver (scipy SLSQP + multiplier recovery + Newton polish)
# ---------------------------------------------------------------------------

def _lagrangian_grad(p, x, y):
    g = np.asarray(p.f0_grad(x), dtype=float) + p.chi0.subgradient(x)
    if p.m:
        J = np.asarray(p.f_jac(x), dtype=float).reshape(p.n, p.m)
        J = J + np.column_stack([c.subgradient(x) for c in p.chis])
        g = g + J @ y
        return g, J
    return g, np.zeros((p.n, 0))


def recover_multipliers(p, x, active_tol=1e-7, face_tol=1e-9):
    """Nonnegative least-squares multipliers for the constraints active at x.

    Returns (y, residual) with residual the norm of the Lagrangian gradient
    after the best normal-cone element of X is added.
    """
    X = p.X
    g0, J = _lagrangian_grad(p, x, np.zeros(p.m))
    psi = p.psi(x) if p.m else np.zeros(0)
    act = np.flatnonzero(psi > -active_tol)
    cols = [J[:, i] for i in act]
    if X.kind == "box":
        for j in np.flatnonzero(x <= X.lower + face_tol):
            e = np.zeros(p.n)
            e[j] = -1.0
            cols.append(e)
        for j in np.flatnonzero(x >= X.upper - face_tol):
            e = np.zeros(p.n)
            e[j] = 1.0
            cols.append(e)
    elif X.kind == "ball":
        d = x - X.center
        if np.linalg.norm(d) >= X.radius - face_tol:
            cols.append(d / np.linalg.norm(d))
    else:
        cols += [np.ones(p.n), -np.ones(p.n)]
        for j in np.flatnonzero(x <= face_tol):
            e = np.zeros(p.n)
            e[j] = -1.0
            cols.append(e)
    y = np.zeros(p.m)
    if not cols:
        return y, float(np.linalg.norm(g0))
    A = np.column_stack(cols)
    coef, res = nnls(A, -g0)
    y[act] = coef[:len(act)]
    return y, float(res)


def _newton_polish(p, x, y, iters=30, fd=1e-6):
    """Active-set Newton on the KKT system (box sets, smooth parts only)."""
    X = p.X
    psi = p.psi(x) if p.m else np.zeros(0)
    act = np.flatnonzero((psi > -1e-7) & (y > 0)) if p.m else np.zeros(0, dtype=int)
    fixed = (x <= X.lower + 1e-9) | (x >= X.upper - 1e-9)
    x = x.copy()
    x[x <= X.lower + 1e-9] = X.lower[x <= X.lower + 1e-9]
    x[x >= X.upper - 1e-9] = X.upper[x >= X.upper - 1e-9]
    free = np.flatnonzero(~fixed)
    ya = y[act].copy()
    nf, na = free.size, act.size
    if nf == 0:
        return x, y
    for _ in range(iters):
        yy = np.zeros(p.m)
        yy[act] = ya
        g, J = _lagrangian_grad(p, x, yy)
        R = np.concatenate([g[free], p.psi(x)[act] if na else np.zeros(0)])
        H = np.empty((nf, nf))
        for k, j in enumerate(free):
            e = np.zeros(p.n)
            e[j] = fd
            gp, _ = _lagrangian_grad(p, x + e, yy)
            gm, _ = _lagrangian_grad(p, x - e, yy)
            H[:, k] = ((gp - gm) / (2.0 * fd))[free]
        H = 0.5 * (H + H.T)
        K = np.zeros((nf + na, nf + na))
        K[:nf, :nf] = H
        if na:
            K[:nf, nf:] = J[np.ix_(free, act)]
            K[nf:, :nf] = J[np.ix_(free, act)].T
        try:
            step = np.linalg.solve(K, -R)
        except np.linalg.LinAlgError:
            break
        x[free] += step[:nf]
        ya += step[nf:]
        if np.linalg.norm(step) <= 1e-15 * (1.0 + np.linalg.norm(x)):
            break
    yy = np.zeros(p.m)
    yy[act] = ya
    return x, yy


@dataclass(frozen=True)
class ReferenceSolution:
    x: np.ndarray
    y: np.ndarray
    value: float
    kkt_residual: float


def kkt_solve(p, x_start=None, polish=True, ftol=1e-15, maxiter=2000):
    """Locally solve a small smooth problem to near machine precision.

    Uses scipy's SLSQP for the active set, recovers multipliers by NNLS and
    (for box sets) polishes with Newton steps on the active KKT system. The
    polished point is kept only if it stays feasible, has valid multiplier
    signs and a smaller KKT residual.
    """
    X = p.X
    x0 = X.centroid() if x_start is None else np.asarray(x_start, dtype=float)

    def fun(z):
        return p.psi0(z)

    def jac(z):
        return np.asarray(p.f0_grad(z), dtype=float) + p.chi0.subgradient(z)

    cons = []
    if p.m:
        cons.append(dict(type="ineq", fun=lambda z: -p.psi(z),
                         jac=lambda z: -_lagrangian_grad(p, z, np.zeros(p.m))[1].T))
    bounds = None
    if X.kind == "box":
        bounds = list(zip(X.lower, X.upper))
    elif X.kind == "ball":
        cons.append(dict(type="ineq", fun=lambda z: np.array([X.radius ** 2 - (z - X.center) @ (z - X.center)]),
                         jac=lambda z: -2.0 * (z - X.center)[None, :]))
    else:
        bounds = [(0.0, 1.0)] * p.n
        cons.append(dict(type="eq", fun=lambda z: np.array([z.sum() - 1.0]),
                         jac=lambda z: np.ones((1, p.n))))
    res = minimize(fun, x0, jac=jac, bounds=bounds, constraints=cons, method="SLSQP",
                   options=dict(ftol=ftol, maxiter=maxiter))
    x = project_feasible(X, res.x)
    y, r = recover_multipliers(p, x)
    if polish and X.kind == "box":
        xp, yp = _newton_polish(p, x, y)
        if X.contains(xp) and np.all(yp >= -1e-12):
            yp = np.maximum(yp, 0.0)
            psi = p.psi(xp) if p.m else np.zeros(0)
            _, rp = recover_multipliers(p, xp)
            if np.all(psi <= 1e-14) and rp <= r:
                x, y, r = xp, yp, rp
                y, r = recover_multipliers(p, x)
    return ReferenceSolution(x=x, y=y, value=p.psi0(x), kkt_residual=r)


# ---------------------------------------------------------------------------
# brute-force oracles for single steps
# ---------------------------------------------------------------------------

def _grid_points(X, h):
    """Grid points of a 2-D or 3-D set (simplex: parametrized by all but the last coordinate)."""
    if X.kind == "simplex":
        k = int(round(1.0 / h))
        ax = np.linspace(0.0, 1.0, k + 1)
        mesh = np.meshgrid(*([ax] * (X.n - 1)), indexing="ij")
        head = np.column_stack([g.ravel() for g in mesh])
        head = head[head.sum(axis=1) <= 1.0 + 1e-12]
        return np.column_stack([head, np.maximum(1.0 - head.sum(axis=1), 0.0)])
    if X.kind == "box":
        spec = GridSpec(tuple(X.lower), tuple(X.upper), h)
    else:
        spec = GridSpec(tuple(X.center - X.radius), tuple(X.center + X.radius), h)
    mesh = np.meshgrid(*spec.axes(), indexing="ij")
    pts = np.column_stack([g.ravel() for g in mesh])
    if X.kind == "ball":
        pts = pts[np.linalg.norm(pts - X.center, axis=1) <= X.radius]
        # the square grid misses the sphere; add boundary points at arc step h
        r = X.radius
        if X.n == 2:
            th = np.arange(0.0, 2.0 * np.pi, h / r)
            bnd = np.column_stack([np.cos(th), np.sin(th)])
        else:
            ph = np.linspace(0.0, np.pi, int(np.ceil(np.pi * r / h)) + 1)
            rows = []
            for a in ph:
                th = np.arange(0.0, 2.0 * np.pi, h / max(r * np.sin(a), h))
                rows.append(np.column_stack([np.sin(a) * np.cos(th), np.sin(a) * np.sin(th),
                                             np.full(th.size, np.cos(a))]))
            bnd = np.vstack(rows)
        pts = np.vstack([pts, X.center + r * bnd])
    return pts


def grid_prox(geom, req, h):
    """Grid minimizer of the prox criterion, written out independently of the
    geometry module: sum of chi terms, <v, x> and eta times the divergence."""
    X = geom.X
    if X.n > 3:
        raise ValueError("grid_prox supports n <= 3")
    pts = _grid_points(X, h)
    xt = np.asarray(req.x_tilde, dtype=float)
    if geom.omega.kind == "entropy":
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(pts > 0, pts * np.log(pts / xt), 0.0)
        div = terms.sum(axis=1) - pts.sum(axis=1) + xt.sum()
    else:
        div = 0.5 * ((pts - xt) ** 2).sum(axis=1)
    val = pts @ np.asarray(req.v, dtype=float) + req.eta * div
    for wi, c in [(1.0, req.chi0)] + list(zip(np.asarray(req.w, dtype=float), req.chis)):
        if c.kind == "linear":
            val += wi * (pts @ c.coef + c.const)
        elif c.kind == "l1":
            val += wi * c.lam * np.abs(pts).sum(axis=1)
    return pts[np.argmin(val)]


def dual_ascent_oracle(y, s, tau):
    """argmax over y' >= 0 of <s, y'> - (tau/2)||y' - y||^2, one coordinate at a
    time by comparing the boundary candidate 0 with the interior stationary point."""
    y = np.asarray(y, dtype=float)
    s = np.asarray(s, dtype=float)
    out = np.empty_like(y)
    for i in range(y.size):
        def score(u):
            return s[i] * u - 0.5 * tau * (u - y[i]) ** 2
        cands = [0.0]
        u = y[i] + s[i] / tau
        if u >= 0.0:
            cands.append(u)
        out[i] = max(cands, key=score)
    return out


def best_known_solution(p):
    """(x*, y*, psi_0*, source) for a benchmark problem.

    Closed forms where they exist, the KKT solver for smooth problems and a
    fine grid for the 2-D scenario problem.
    """
    prm = p.params
    if p.name == "ball-projection":
        x, y, v = analytic_ball_projection(prm["a"], prm["b"], prm["r"])
        if p.X.contains(x):
            return x, np.array([y]), v, "analytic"
    if p.name == "nonsmooth-l1" and not np.any(prm.get("b", 0.0)):
        x, y, v = analytic_l1_ball(prm["a"], prm["r"], prm["lam"])
        if p.X.contains(x):
            return x, np.array([y]), v, "analytic"
    if p.scenarios is not None:
        x, v = cvar_reference(p)
        return x, np.full(p.m, np.nan), v, "scalar"
    starts = [p.X.centroid()]
    if p.n <= 3:
        try:
            starts.append(grid_solve(p, h=1e-2).x)
        except (EmptyFeasibleGridError, GridTooLargeError, ValueError):
            pass
    sols = [kkt_solve(p, s) for s in starts]
    sols = [s for s in sols if np.all(p.psi(s.x) <= 1e-9)] or sols
    best = min(sols, key=lambda s: s.value)
    return best.x, best.y, best.value, "kkt"


def cvar_reference(p):
    """Exact minimizer of the scenario CVaR problem by reduction to one variable.

    For fixed z the objective is piecewise linear and convex in t with kinks
    at the scenario losses, so the inner minimum is attained at one of them.
    The resulting function of z is convex, and the mean-loss constraint cuts
    out an interval around the scenario mean, so a bounded scalar search finds
    the optimum.
    """
    model = p.scenarios
    xi, k = model.xi, model.k
    lo, hi = p.X.lower[0], p.X.upper[0]
    slack = 2.0 * (model.cap - 0.5 * np.var(xi))
    if slack < 0:
        raise EmptyFeasibleGridError("mean-loss cap is below its minimum")
    half = np.sqrt(slack)
    a, b = max(lo, xi.mean() - half), min(hi, xi.mean() + half)
    if a > b:
        raise EmptyFeasibleGridError("no feasible z in the box")

    def inner(z):
        loss = 0.5 * (z - xi) ** 2
        ts = np.clip(np.sort(loss), p.X.lower[1], p.X.upper[1])
        vals = ts + k * np.maximum(loss[None, :] - ts[:, None], 0.0).mean(axis=1)
        j = int(np.argmin(vals))
        return vals[j], ts[j]

    res = minimize_scalar(lambda z: inner(z)[0], bounds=(a, b), method="bounded",
                          options=dict(xatol=1e-12))
    cands = [res.x, a, b]
    best = min(cands, key=lambda z: inner(z)[0])
    v, t = inner(best)
    return np.array([best, t]), float(v)
