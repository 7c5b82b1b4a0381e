"""Composite constrained problems and desk-scale benchmark generators.

A problem is min psi_0(x) over X subject to psi_i(x) <= 0, where
psi_i = f_i + chi_i. The f parts are given as callables; the chi parts are
``CompositeTerm`` objects that the prox step knows how to handle.
"""
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .geometry import (CompositeTerm, DomainError, FeasibleSet, Geometry,
                       check_prox_support)


class ConfigurationError(ValueError):
    """Bad benchmark name, parameter or missing constant."""


@dataclass(frozen=True, eq=False)
class ConstrainedProblem:
    """min f0(x) + chi0(x) over X s.t. f_i(x) + chi_i(x) <= 0, i = 1..m.

    Parameters
    ----------
    geometry : Geometry
    f0, f0_grad : callables
        Objective smooth(ish) part and a subgradient selection.
    f, f_jac : callables
        Constraint values (m-vector) and subgradients as an (n, m) array.
    L0, H0 : float
        Upper curvature and nonsmoothness constants of f0.
    L, H, M_f, M_chi : arrays of length m
        The same per constraint, plus Lipschitz constants of f_i and chi_i.
    alpha0, alpha : strong convexity moduli (objective, constraints).
    mu0, mu : lower curvature moduli; zero means convex.
    quad : (Quadratic, tuple of Quadratic), optional
        Set when every smooth part is a plain quadratic.
    first_order : callable, optional
        x -> (f0'(x), f'(x), f(x)) in one call; a fast path for solvers.
    """
    geometry: Geometry
    f0: object
    f0_grad: object
    f: object
    f_jac: object
    chi0: CompositeTerm = field(default_factory=CompositeTerm.zero)
    chis: tuple = ()
    L0: float = 0.0
    H0: float = 0.0
    L: np.ndarray = None
    H: np.ndarray = None
    M_f: np.ndarray = None
    M_chi: np.ndarray = None
    alpha0: float = 0.0
    alpha: np.ndarray = None
    mu0: float = 0.0
    mu: np.ndarray = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    scenarios: object = None
    batch_f: object = None
    quad: tuple = None
    first_order: object = None

    def __post_init__(self):
        m = len(self.chis)
        for attr in ("L", "H", "M_f", "M_chi", "alpha", "mu"):
            val = getattr(self, attr)
            val = np.zeros(m) if val is None else np.asarray(val, dtype=float).reshape(m)
            if np.any(val < 0):
                raise ValueError(f"constant {attr} must be nonnegative")
            object.__setattr__(self, attr, val)
        for attr in ("L0", "H0", "alpha0", "mu0"):
            if getattr(self, attr) < 0:
                raise ValueError(f"constant {attr} must be nonnegative")
        check_prox_support(self.geometry, self.chi0, self.chis)

    @property
    def n(self):
        return self.geometry.n

    @property
    def m(self):
        return len(self.chis)

    @property
    def X(self):
        return self.geometry.X

    @property
    def is_composite_smooth(self):
        return self.H0 == 0.0 and not np.any(self.H > 0)

    @property
    def is_convex(self):
        return self.mu0 == 0.0 and not np.any(self.mu > 0)

    def chi_values(self, x):
        return np.array([c.value(x) for c in self.chis])

    def psi(self, x):
        """Constraint values psi(x) without the membership check."""
        return np.asarray(self.f(x), dtype=float) + self.chi_values(x)

    def psi0(self, x):
        return float(self.f0(x)) + self.chi0.value(x)


def eval_full(p, x):
    """Exact (psi_0(x), psi(x)); raises DomainError when x is not in X."""
    x = np.asarray(x, dtype=float)
    if not p.X.contains(x):
        raise DomainError("point is outside the feasible set")
    return p.psi0(x), p.psi(x)


def _chi_batch(c, Xs):
    if c.kind == "zero":
        return np.zeros(Xs.shape[0])
    if c.kind == "linear":
        return Xs @ c.coef + c.const
    return c.lam * np.abs(Xs).sum(axis=1)


def batch_psi(p, Xs):
    """psi_0 and psi on many points at once: shapes (N,) and (N, m)."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    if p.batch_f is not None:
        v0, v = p.batch_f(Xs)
    else:
        v0 = np.array([p.f0(x) for x in Xs], dtype=float)
        v = np.array([p.f(x) for x in Xs], dtype=float).reshape(len(Xs), p.m)
    v0 = v0 + _chi_batch(p.chi0, Xs)
    v = v + np.column_stack([_chi_batch(c, Xs) for c in p.chis]) if p.m else v
    return v0, v


def subgradient_eval(p, x):
    """(f0'(x), f'(x)) with f'(x) of shape (n, m)."""
    x = np.asarray(x, dtype=float)
    g0 = np.asarray(p.f0_grad(x), dtype=float)
    G = np.asarray(p.f_jac(x), dtype=float).reshape(p.n, p.m)
    return g0, G


@dataclass(frozen=True)
class AggregatedConstants:
    """Root-sum-square aggregates of the per-constraint constants."""
    M_f: float
    M_chi: float
    H_f: float
    L_f: float
    L0: float = 0.0
    H0: float = 0.0
    alpha0: float = 0.0

    @property
    def calM(self):
        return max(2.0 * self.M_f, self.M_chi + self.M_f)

    def H_B(self, B):
        return self.H0 + B * self.H_f

    def H_star(self, y_norm, B, D_X):
        """H0 + (|y*| + 1) H_f + L_f D_X [|y*| + 1 - B]_+ / 2."""
        return (self.H0 + (y_norm + 1.0) * self.H_f
                + self.L_f * D_X * max(y_norm + 1.0 - B, 0.0) / 2.0)

    def zeta_sc(self, y_norm, B, sigma0, sigma_norm, sigma_Xf, t0, D_X):
        """zeta of the strongly convex bounds."""
        Hs = self.H_star(y_norm, B, D_X)
        inner = (sigma0 ** 2 + 12.0 * (t0 + 3.0) * sigma_norm ** 2 * y_norm ** 2
                 + 96.0 * (t0 + 2.0) * B ** 2 * sigma_norm ** 2 + Hs ** 2 / 2.0
                 + 3.0 * self.alpha0 * B * sigma_Xf * (t0 + 2.0) ** 1.5 / 2.0)
        return 2.0 * np.e * np.sqrt(inner)

    def zeta_cvx(self, y_norm, B, sigma0, sigma_norm, H_star):
        """zeta of the convex bounds."""
        inner = (sigma0 ** 2 + sigma_norm ** 2 * (14.0 * y_norm ** 2 + 123.0 * B ** 2)
                 + 2.0 * np.sqrt(3.0) * sigma_norm * (2.0 * B * H_star + B * sigma0))
        return 2.0 * np.e * np.sqrt(inner)


def aggregate_constants(p):
    return AggregatedConstants(
        M_f=float(np.linalg.norm(p.M_f)), M_chi=float(np.linalg.norm(p.M_chi)),
        H_f=float(np.linalg.norm(p.H)), L_f=float(np.linalg.norm(p.L)),
        L0=float(p.L0), H0=float(p.H0), alpha0=float(p.alpha0))


# ---------------------------------------------------------------------------
# quadratic building block
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Quadratic:
    """q(x) = 0.5 x'Qx + c'x + d."""
    Q: np.ndarray
    c: np.ndarray
    d: float = 0.0

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))

    def value(self, x):
        return 0.5 * float(x @ self.Q @ x) + float(self.c @ x) + self.d

    def values(self, Xs):
        """Row-wise values for a batch of points, shape (N,)."""
        return 0.5 * np.einsum("ij,jk,ik->i", Xs, self.Q, Xs) + Xs @ self.c + self.d

    def grad(self, x):
        return self.Q @ x + self.c

    @property
    def upper_curvature(self):
        return max(float(np.linalg.eigvalsh(self.Q).max()), 0.0)

    @property
    def lower_curvature(self):
        return max(-float(np.linalg.eigvalsh(self.Q).min()), 0.0)

    @property
    def strong_convexity(self):
        return max(float(np.linalg.eigvalsh(self.Q).min()), 0.0)

    def grad_bound(self, X):
        """sup over X of ||Qx + c||_2 (exact on boxes, a valid bound on balls)."""
        if X.kind == "box":
            verts = np.array(list(product(*zip(X.lower, X.upper))))
            return float(np.linalg.norm(verts @ self.Q + self.c, axis=1).max())
        if X.kind == "ball":
            g = self.Q @ X.center + self.c
            return float(np.linalg.norm(g) + np.linalg.norm(self.Q, 2) * X.radius)
        return float(np.linalg.norm(self.Q, 2) + np.linalg.norm(self.c))


def quadratic_first_order(obj, cons):
    """Fused (f0', f', f) evaluation for quadratic pieces."""
    Q0, c0 = obj.Q, obj.c
    n = c0.size
    if cons:
        Qs = np.stack([q.Q for q in cons])
        Cc = np.column_stack([q.c for q in cons])
        ds = np.array([q.d for q in cons])
    else:
        Qs, Cc, ds = np.zeros((0, n, n)), np.zeros((n, 0)), np.zeros(0)

    def first_order(x):
        Qx = Qs @ x
        return Q0 @ x + c0, Qx.T + Cc, 0.5 * (Qx @ x) + x @ Cc + ds

    return first_order


def quadratic_problem(geom, obj, cons, chi0=None, alpha0=None, name="custom",
                       params=None, H0=0.0, extra_f0=None, L0_extra=0.0):
    """Assemble a problem whose smooth parts are quadratics."""
    cons = list(cons)
    m = len(cons)
    f0v, f0g = obj.value, obj.grad
    extra_batch = None
    if extra_f0 is not None:
        ev, eg, extra_batch = extra_f0
        f0v = (lambda x, a=obj.value, b=ev: a(x) + b(x))
        f0g = (lambda x, a=obj.grad, b=eg: a(x) + b(x))

    def batch_f(Xs):
        v0 = obj.values(Xs)
        if extra_batch is not None:
            v0 = v0 + extra_batch(Xs)
        v = np.column_stack([q.values(Xs) for q in cons]) if m else np.zeros((len(Xs), 0))
        return v0, v

    def f(x):
        return np.array([q.value(x) for q in cons])

    def f_jac(x):
        if m == 0:
            return np.zeros((x.size, 0))
        return np.column_stack([q.grad(x) for q in cons])

    return ConstrainedProblem(
        geometry=geom, f0=f0v, f0_grad=f0g, f=f, f_jac=f_jac,
        chi0=chi0 or CompositeTerm.zero(), chis=tuple(CompositeTerm.zero() for _ in cons),
        L0=obj.upper_curvature + L0_extra, H0=H0,
        L=[q.upper_curvature for q in cons], H=np.zeros(m),
        M_f=[q.grad_bound(geom.X) for q in cons], M_chi=np.zeros(m),
        alpha0=obj.strong_convexity if alpha0 is None else alpha0,
        alpha=[q.strong_convexity for q in cons],
        mu0=obj.lower_curvature, mu=[q.lower_curvature for q in cons],
        name=name, params=dict(params or {}), batch_f=batch_f,
        quad=None if extra_f0 is not None else (obj, tuple(cons)),
        first_order=None if extra_f0 is not None else quadratic_first_order(obj, cons))


def _box(params, n, default=1.0):
    lo = params.get("lower", -default)
    hi = params.get("upper", default)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,)).copy()
    return FeasibleSet.box(lo, hi)


# ---------------------------------------------------------------------------
# benchmark generators
# ---------------------------------------------------------------------------

def _ball_projection(params):
    a = np.asarray(params.get("a", (1.0, 1.0)), dtype=float)
    n = a.size
    b = np.asarray(params.get("b", np.zeros(n)), dtype=float)
    r = float(params.get("r", 0.5))
    geom = Geometry(_box(params, n))
    obj = Quadratic(np.eye(n), -a, 0.5 * float(a @ a))
    con = Quadratic(2.0 * np.eye(n), -2.0 * b, float(b @ b) - r * r)
    return quadratic_problem(geom, obj, [con], name="ball-projection",
                              params=dict(a=a, b=b, r=r))


def _nonsmooth_l1(params):
    a = np.asarray(params.get("a", (1.0, 0.2)), dtype=float)
    n = a.size
    b = np.asarray(params.get("b", np.zeros(n)), dtype=float)
    r = float(params.get("r", 0.4))
    lam = float(params.get("lam", 0.5))
    placement = params.get("placement", "prox")
    geom = Geometry(_box(params, n))
    obj = Quadratic(np.eye(n), -a, 0.5 * float(a @ a))
    con = Quadratic(2.0 * np.eye(n), -2.0 * b, float(b @ b) - r * r)
    info = dict(a=a, b=b, r=r, lam=lam, placement=placement)
    if placement == "prox":
        return quadratic_problem(geom, obj, [con], chi0=CompositeTerm.l1(lam),
                                  name="nonsmooth-l1", params=info)
    if placement == "subgradient":
        # lam*|x|_1 inside f0; the subgradient jump bound needs H0 = 2 lam sqrt(n)
        extra = (lambda x: lam * float(np.abs(x).sum()), lambda x: lam * np.sign(x),
                 lambda Xs: lam * np.abs(Xs).sum(axis=1))
        return quadratic_problem(geom, obj, [con], name="nonsmooth-l1", params=info,
                                  H0=2.0 * lam * np.sqrt(n), extra_f0=extra)
    raise ConfigurationError(f"unknown l1 placement {placement!r}")


def _qcqp_convex(params):
    Q0 = np.asarray(params.get("Q0", [[1.0, 0.0], [0.0, 0.0]]), dtype=float)
    n = Q0.shape[0]
    c0 = np.asarray(params.get("c0", -np.ones(n)), dtype=float)
    Qs = params.get("Qs", [[[1.0, 0.0], [0.0, 2.0]], [[1.0, 0.0], [0.0, 1.0]]])
    cs = params.get("cs", [[0.0, 0.0], [-1.0, 0.0]])
    ds = params.get("ds", [-0.5, -0.3])
    cons = [Quadratic(Q, c, d) for Q, c, d in zip(Qs, cs, ds)]
    for q in cons:
        if q.lower_curvature > 0:
            raise ConfigurationError("qcqp-convex needs positive semidefinite constraints")
    obj = Quadratic(Q0, c0)
    if obj.lower_curvature > 0:
        raise ConfigurationError("qcqp-convex needs a positive semidefinite objective")
    geom = Geometry(_box(params, n))
    return quadratic_problem(geom, obj, cons, alpha0=0.0, name="qcqp-convex",
                              params=dict(Q0=Q0, c0=c0, Qs=Qs, cs=cs, ds=ds))


def _nonconvex_quadratic(params):
    # defaults: x2 is pushed against the curved constraint while x1 only feels
    # a weak reduced curvature, so the proximal-point path converges slowly
    Q0 = np.asarray(params.get("Q0", [[0.02, 0.0], [0.0, -2.0]]), dtype=float)
    n = Q0.shape[0]
    c0 = np.asarray(params.get("c0", [-0.01, -1.0]), dtype=float)
    Q1 = np.asarray(params.get("Q1", [[0.05, 0.0], [0.0, -0.2]]), dtype=float)
    c1 = np.asarray(params.get("c1", [0.0, 4.0]), dtype=float)
    d1 = float(params.get("d1", 3.3))
    scale = float(params.get("scale", 1.0))
    rho = float(params.get("rho", 1.0))
    geom = Geometry(FeasibleSet.box(-rho * np.ones(n), rho * np.ones(n)))
    obj = Quadratic(scale * Q0, scale * c0)
    con = Quadratic(scale * Q1, scale * c1, -scale * d1)
    p = quadratic_problem(geom, obj, [con], alpha0=0.0, name="nonconvex-quadratic",
                           params=dict(Q0=Q0, c0=c0, Q1=Q1, c1=c1, d1=d1, scale=scale, rho=rho))
    D2 = geom.diameter() ** 2
    center = geom.initial_point()
    slack = -p.psi(center)
    need = 2.0 * p.mu * D2
    if np.any(slack < need):
        raise ConfigurationError(
            "strong feasibility at the box center fails; raise d1 or shrink rho")
    return p


class ScenarioModel:
    """Finite scenario pool for the CVaR toy problem.

    Decision vector is (z, t). Scenario loss is 0.5*(z - xi)^2, objective
    t + mean[(loss - t)_+]/(1 - level), constraint mean loss <= cap.
    """

    def __init__(self, xi, level, cap):
        self.xi = np.asarray(xi, dtype=float)
        self.level = float(level)
        self.cap = float(cap)
        self.k = 1.0 / (1.0 - self.level)

    @property
    def size(self):
        return self.xi.size

    def per_scenario(self, x, idx=None):
        """Per-scenario (G0 rows, G rows, F rows) at x for indices idx."""
        xi = self.xi if idx is None else self.xi[idx]
        z, t = x[0], x[1]
        loss = 0.5 * (z - xi) ** 2
        act = (loss > t).astype(float) * self.k
        G0 = np.column_stack([act * (z - xi), 1.0 - act])
        G = np.column_stack([z - xi, np.zeros_like(xi)])[:, :, None]
        F = (loss - self.cap)[:, None]
        return G0, G, F

    def exact(self, x):
        G0, G, F = self.per_scenario(x)
        return G0.mean(axis=0), G.mean(axis=0), F.mean(axis=0)

    def variances(self, x):
        """Exact (E|G0 - f0'|^2, E|G_i - f_i'|^2 per i, E|F - f|^2) at x."""
        G0, G, F = self.per_scenario(x)
        v0 = float(((G0 - G0.mean(axis=0)) ** 2).sum(axis=1).mean())
        vi = ((G - G.mean(axis=0)) ** 2).sum(axis=1).mean(axis=0)
        vf = float(((F - F.mean(axis=0)) ** 2).sum(axis=1).mean())
        return v0, vi, vf


def _cvar_toy(params):
    ns = int(params.get("scenarios", 200))
    level = float(params.get("level", 0.9))
    seed = int(params.get("scenario_seed", 12345))
    if "xi" in params:
        xi = np.atleast_1d(np.asarray(params["xi"], dtype=float))
    else:
        xi = np.random.default_rng(seed).exponential(1.0, size=ns)
    zl, zu = float(params.get("z_lower", 0.0)), float(params.get("z_upper", 3.0))
    dev = max(np.abs(zl - xi).max(), np.abs(zu - xi).max())
    t_hi = float(params.get("t_upper", 0.5 * dev ** 2))
    cap = float(params.get("cap", 0.65))
    model = ScenarioModel(xi, level, cap)
    geom = Geometry(FeasibleSet.box([zl, 0.0], [zu, t_hi]))
    k = model.k

    def f0(x):
        loss = 0.5 * (x[0] - xi) ** 2
        return x[1] + k * np.maximum(loss - x[1], 0.0).mean()

    def f0_grad(x):
        return model.exact(x)[0]

    def f(x):
        return np.array([0.5 * ((x[0] - xi) ** 2).mean() - cap])

    def f_jac(x):
        return np.array([[x[0] - xi.mean()], [0.0]])

    def batch_f(Xs):
        loss = 0.5 * (Xs[:, :1] - xi[None, :]) ** 2
        v0 = Xs[:, 1] + k * np.maximum(loss - Xs[:, 1:2], 0.0).mean(axis=1)
        return v0, (loss.mean(axis=1) - cap)[:, None]

    xbar = xi.mean()
    G_max = np.sqrt(dev ** 2 + 1.0)
    # Var of the scaled scenario loss is a convex quadratic in z: max at an end
    var_f = max(np.var(0.5 * (z - xi) ** 2) for z in (zl, zu))
    noise = dict(sigma0=float(np.sqrt((dev ** 2 + 0.25) * k ** 2)),
                 sigma=np.array([float(np.std(xi))]), sigma_f=float(np.sqrt(var_f)))
    return ConstrainedProblem(
        geometry=geom, f0=f0, f0_grad=f0_grad, f=f, f_jac=f_jac,
        chi0=CompositeTerm.zero(), chis=(CompositeTerm.zero(),),
        L0=k, H0=k * G_max, L=[1.0], H=[0.0],
        M_f=[max(abs(zl - xbar), abs(zu - xbar))], M_chi=[0.0],
        alpha0=0.0, alpha=[0.0], name="cvar-toy",
        params=dict(level=level, cap=cap, xi=xi, noise_bounds=noise), scenarios=model,
        batch_f=batch_f)


BENCHMARKS = {
    "ball-projection": _ball_projection,
    "nonsmooth-l1": _nonsmooth_l1,
    "qcqp-convex": _qcqp_convex,
    "cvar-toy": _cvar_toy,
    "nonconvex-quadratic": _nonconvex_quadratic,
}


def make_benchmark(name, params=None):
    """Build one of the named benchmark problems.

    Parameters
    ----------
    name : str
        One of ``BENCHMARKS``.
    params : dict, optional
        Generator-specific overrides (see each generator).
    """
    try:
        gen = BENCHMARKS[name]
    except KeyError:
        raise ConfigurationError(f"unknown benchmark {name!r}") from None
    return gen(dict(params or {}))
