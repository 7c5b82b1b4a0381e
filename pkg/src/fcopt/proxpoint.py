"""Proximal-point outer loops for nonconvex constrained problems.

Each outer step solves a strongly convex subproblem obtained by adding
2*mu_i*W(x, x_{k-1}) to the objective and to every nonconvex constraint.
The exact loop uses the reference solver for the subproblems; the inexact
loop uses the primal-dual engine with the count that guarantees the
requested accuracy.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .conex import ConExParams, iterations_for_accuracy, run_conex
from .geometry import grad_omega, normal_cone_project
from .oracles import NoiseConfig
from .problems import ConfigurationError, ConstrainedProblem, Quadratic, quadratic_first_order
from .reference import kkt_solve


class PreconditionError(ValueError):
    pass


class ProxPointError(RuntimeError):
    def __init__(self, k, cause):
        super().__init__(f"outer iteration {k}: {cause}")
        self.k = k


# ---------------------------------------------------------------------------
# subproblem
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProxSubproblem:
    """Shifted problem around ``center`` together with its base problem."""
    base: ConstrainedProblem
    center: np.ndarray
    problem: ConstrainedProblem
    shifted_constraints: bool


def build_subproblem(p, center):
    """psi_i(x; c) = psi_i(x) + 2 mu_i W(x, c) for i = 0 and every i with mu_i > 0.

    When all constraint moduli vanish the constraints are passed through
    unchanged. Constants: L_i grows by 2 mu_i L_omega, M_f,i by
    2 mu_i L_omega D_X; the objective gains strong convexity mu_0 (on top
    of any modulus it already had).
    """
    c = np.array(center, dtype=float)
    if not p.X.contains(c):
        raise PreconditionError("center is outside X")
    geom = p.geometry
    W = geom.W
    gc = grad_omega(geom.omega, c)
    Lw = geom.L_omega
    D = geom.diameter()
    mu0 = p.mu0
    mu = p.mu.copy()
    shift = bool(np.any(mu > 0))
    euclid = geom.omega.kind == "euclidean"

    def f0(x):
        return p.f0(x) + 2.0 * mu0 * W(x, c)

    def f0_grad(x):
        return np.asarray(p.f0_grad(x), dtype=float) + 2.0 * mu0 * (grad_omega(geom.omega, x) - gc)

    if shift:
        def f(x):
            w = W(x, c)
            return np.asarray(p.f(x), dtype=float) + 2.0 * mu * w

        def f_jac(x):
            d = grad_omega(geom.omega, x) - gc
            return np.asarray(p.f_jac(x), dtype=float).reshape(p.n, p.m) + np.outer(d, 2.0 * mu)
    else:
        f, f_jac = p.f, p.f_jac

    batch_f = None
    if p.batch_f is not None and euclid:
        def batch_f(Xs):
            v0, v = p.batch_f(Xs)
            w = 0.5 * ((Xs - c) ** 2).sum(axis=1)
            if shift:
                v = v + 2.0 * w[:, None] * mu[None, :]
            return v0 + 2.0 * mu0 * w, v

    quad = first_order = None
    if p.quad is not None and euclid:
        # shifted quadratics stay quadratics: Q + 2 mu I, c - 2 mu c_k, d + mu |c_k|^2
        obj, cons = p.quad
        eye = np.eye(p.n)

        def shifted(q, k):
            return Quadratic(q.Q + 2.0 * k * eye, q.c - 2.0 * k * c, q.d + k * float(c @ c))

        quad = (shifted(obj, mu0), tuple(shifted(q, k) for q, k in zip(cons, mu)))
        first_order = quadratic_first_order(*quad)

    sub = replace(
        p, f0=f0, f0_grad=f0_grad, f=f, f_jac=f_jac,
        L0=p.L0 + 2.0 * mu0 * Lw,
        L=p.L + 2.0 * mu * Lw if shift else p.L,
        M_f=p.M_f + 2.0 * mu * Lw * D if shift else p.M_f,
        alpha0=p.alpha0 + mu0, alpha=p.alpha + mu if shift else p.alpha,
        mu0=0.0, mu=np.zeros(p.m), name=p.name + "/prox", batch_f=batch_f,
        scenarios=None, quad=quad, first_order=first_order)
    return ProxSubproblem(base=p, center=c, problem=sub, shifted_constraints=shift)


# ---------------------------------------------------------------------------
# residuals and bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KKTResidual:
    feasibility: float
    complementarity: float
    stationarity: float
    dual_l1: float

    def passes(self, eps, eps_feas=None):
        eps_feas = eps if eps_feas is None else eps_feas
        return (self.feasibility <= eps_feas and self.complementarity <= eps
                and self.stationarity ** 2 <= eps)


def kkt_residual(p, x, y, face_tol=1e-10):
    """Feasibility, complementarity and stationarity residuals at (x, y).

    Stationarity is ||g + P_N(-g)|| with N the normal cone of X at x and g
    the minimal-norm element of the Lagrangian subdifferential (after the
    normal cone has been taken into account, for l1 kinks on boxes).
    """
    x = np.asarray(x, dtype=float)
    y = np.zeros(p.m) if y is None else np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise PreconditionError("multipliers must be nonnegative")
    psi = p.psi(x) if p.m else np.zeros(0)
    feas = float(np.linalg.norm(np.maximum(psi, 0.0)))
    comp = float(np.abs(y * psi).sum())
    g = np.asarray(p.f0_grad(x), dtype=float).copy()
    if p.m:
        J = np.asarray(p.f_jac(x), dtype=float).reshape(p.n, p.m)
        g += J @ y
        for yi, ci in zip(y, p.chis):
            if ci.kind == "linear":
                g += yi * ci.coef
    chi0 = p.chi0
    if chi0.kind == "linear":
        g += chi0.coef
    X = p.X
    if chi0.kind == "l1":
        kink = x == 0.0
        g += chi0.lam * np.sign(x)
        lo = np.where(kink, g - chi0.lam, g)
        hi = np.where(kink, g + chi0.lam, g)
        at_lo = x <= X.lower + face_tol
        at_hi = x >= X.upper - face_tol
        r = np.where(at_lo, np.maximum(-hi, 0.0),
                     np.where(at_hi, np.maximum(lo, 0.0), np.maximum(np.maximum(lo, -hi), 0.0)))
        stat = float(np.linalg.norm(r))
    else:
        stat = float(np.linalg.norm(g + normal_cone_project(X, x, -g, tol=face_tol)))
    return KKTResidual(feasibility=feas, complementarity=comp, stationarity=stat,
                       dual_l1=float(np.abs(y).sum()))


@dataclass(frozen=True)
class DualBound:
    """Outcome of the strong-feasibility certificate.

    ``kind`` is "certified" (B holds), "failed" (``violating`` names the
    first constraint breaking the certificate) or "slater" (zero moduli:
    only strict feasibility is reported in ``certified``).
    """
    kind: str
    B: float = None
    violating: int = None
    certified: bool = False


def dual_bound(p, x_bar, psi0_star):
    """Uniform bound on subproblem multipliers from a strongly feasible point.

    Requires psi_i(x_bar) <= -2 mu_i D_X^2 for every i. ``psi0_star`` may be
    any lower bound on the optimal value.
    """
    x_bar = np.asarray(x_bar, dtype=float)
    psi = p.psi(x_bar)
    D2 = p.geometry.diameter() ** 2
    mu = p.mu
    if p.m == 0:
        return DualBound(kind="certified", B=0.0, certified=True)
    if np.min(mu) <= 0.0:
        return DualBound(kind="slater", certified=bool(np.all(psi < 0)))
    bad = np.flatnonzero(psi > -2.0 * mu * D2)
    if bad.size:
        return DualBound(kind="failed", violating=int(bad[0]))
    B = (p.psi0(x_bar) - psi0_star + p.mu0 * D2) / (np.min(mu) * D2)
    return DualBound(kind="certified", B=float(B), certified=True)


def local_dual_bound(psi0_prev, psi0_cur, psi_prev):
    """(psi_0(x_{k-1}) - psi_0(x_k)) / min_i(-psi_i(x_{k-1}))."""
    slack = -np.asarray(psi_prev, dtype=float)
    if slack.size == 0:
        return 0.0
    if np.min(slack) <= 0:
        raise PreconditionError("previous iterate must be strictly feasible")
    return (psi0_prev - psi0_cur) / float(np.min(slack))


@dataclass(frozen=True)
class ToleranceSchedule:
    eps: float
    delta: float
    delta_bar: float
    K: int
    c1: float
    c2: float
    mu0: float

    @property
    def eps_bar(self):
        """Target 2 eps / (mu_0 c_1) for the expected squared distance to x_k*."""
        return 2.0 * self.eps / (self.mu0 * self.c1)


def tolerance_schedule(eps, B, L_omega=1.0, mu0=1.0, mu_max=1.0, delta_psi0=0.0,
                       delta_bar0=0.0, c=1.0):
    """Constant accuracies and outer count that reach eps-KKT in expectation."""
    if not eps > 0:
        raise ConfigurationError("eps must be positive")
    c1 = max(2.0 * L_omega, 8.0 * L_omega ** 2 * (mu0 + mu_max * B))
    c2 = c + B
    delta_bar = eps / (2.0 * c1 * c2)
    K = int(math.ceil(2.0 * c1 * (delta_psi0 + B * delta_bar0) / eps))
    return ToleranceSchedule(eps=eps, delta=c * delta_bar, delta_bar=delta_bar, K=max(K, 1),
                             c1=c1, c2=c2, mu0=mu0)


# ---------------------------------------------------------------------------
# outer loops
# ---------------------------------------------------------------------------

@dataclass
class ProxPointTrace:
    xs: np.ndarray
    psi0: np.ndarray
    psi: np.ndarray
    ys: np.ndarray
    residuals: list
    k_hat: int = None
    inner_T: list = field(default_factory=list)
    schedule: ToleranceSchedule = None
    stopped_early: bool = False

    @property
    def K(self):
        return len(self.xs) - 1

    def kkt_series(self):
        """stationarity^2 + complementarity for k = 1..K."""
        return np.array([r.stationarity ** 2 + r.complementarity for r in self.residuals])


def _check_start(p, x0):
    x0 = np.asarray(x0, dtype=float)
    if not p.X.contains(x0):
        raise PreconditionError("x0 is outside X")
    if p.m and not np.all(p.psi(x0) < 0):
        raise PreconditionError("x0 must be strictly feasible")
    return x0


def run_exact_proxpoint(p, x0, K, inner_accuracy=1e-10, solver="reference", psi0_lower=None,
                        bound=None):
    """K exact proximal-point steps.

    Parameters
    ----------
    solver : {"reference", "conex"}
        Subproblems are solved by the reference NLP solver, or by the
        primal-dual engine run for the count matching ``inner_accuracy``
        (which needs ``bound`` or ``psi0_lower``, as in the inexact loop).
    """
    x = _check_start(p, x0)
    if solver == "conex" and bound is None and psi0_lower is not None:
        bound = uniform_inner_bound(p, psi0_lower)
    xs, f0s, psis, ys, res, Ts = [x], [p.psi0(x)], [p.psi(x)], [], [], []
    early = False
    for k in range(1, K + 1):
        sub = build_subproblem(p, x)
        try:
            if solver == "reference":
                sol = kkt_solve(sub.problem, x_start=x)
                if sol.kkt_residual > max(inner_accuracy, 1e-8):
                    raise RuntimeError(f"subproblem KKT residual {sol.kkt_residual:.3g}")
                x_new, y = sol.x, sol.y
            elif solver == "conex":
                x_new, y, T = _conex_inner(sub, x, inner_accuracy, inner_accuracy, k, 0,
                                           bound=bound)
                Ts.append(T)
            else:
                raise ConfigurationError(f"unknown inner solver {solver!r}")
        except (ConfigurationError, PreconditionError):
            raise
        except Exception as err:
            raise ProxPointError(k, err) from err
        step = float(np.linalg.norm(x_new - x))
        x = x_new
        xs.append(x)
        f0s.append(p.psi0(x))
        psis.append(p.psi(x))
        ys.append(y)
        res.append(kkt_residual(p, x, y))
        if step <= 1e-12:
            early = True
            break
    return ProxPointTrace(xs=np.array(xs), psi0=np.array(f0s), psi=np.array(psis),
                          ys=np.array(ys).reshape(len(ys), p.m), residuals=res,
                          inner_T=Ts, stopped_early=early)


def uniform_inner_bound(p, psi0_lower, x_bar=None):
    """(ConEx B, dual-norm estimate) valid for every subproblem, or None.

    The certificate is checked once at ``x_bar`` (default: centre of X);
    when it passes, every subproblem multiplier has l1 norm at most B_L.
    """
    x_bar = p.X.centroid() if x_bar is None else x_bar
    cert = dual_bound(p, x_bar, psi0_lower)
    if cert.kind == "certified":
        return cert.B + 1.0, cert.B
    return None


def _conex_inner(sub, x, delta, delta_bar, k, seed, cfg=None, bound=None, output="average",
                 max_T=None):
    cfg = NoiseConfig() if cfg is None else cfg
    if bound is None:
        raise ConfigurationError("inner engine needs a dual bound (B, y_norm)")
    B, y_norm = bound
    eps = min(delta, delta_bar)
    T = iterations_for_accuracy(eps, sub.problem, cfg, B=B, y_norm=y_norm)
    if max_T is not None:
        T = min(T, max_T)
    inner_seed = int(np.random.SeedSequence([seed, k]).generate_state(1)[0])
    r = run_conex(sub.problem, cfg, ConExParams(T=T, B=B, x0=x), seed=inner_seed)
    x_new = r.x_bar if output == "average" else r.x_last
    return x_new, r.y_last, T


def draw_k_hat(seed, K):
    """Output index, uniform on 1..K; depends on the seed only."""
    return int(np.random.default_rng([seed, 0x6B68]).integers(1, K + 1))


def run_inexact_proxpoint(p, x0, K, schedule, seed=0, cfg=None, psi0_lower=None, bound=None,
                          output="average", stop_at_k_hat=True, max_T=None):
    """Inexact proximal point with primal-dual inner solves.

    Parameters
    ----------
    schedule : ToleranceSchedule or (delta, delta_bar)
    seed : int
        Drives the random output index and every inner run.
    psi0_lower : float, optional
        Lower bound on the optimal value; used to certify the inner dual
        bound at the centre of X.
    bound : (B, y_norm), optional
        Inner dual bound, overriding the certificate.
    output : {"average", "last"}
        Which inner iterate becomes x_k.
    stop_at_k_hat : bool
        The output index is drawn before the loop (it is independent of the
        iterates), so iterations after it can be skipped without changing
        the distribution of the output.
    """
    x = _check_start(p, x0)
    if isinstance(schedule, ToleranceSchedule):
        delta, delta_bar, sched = schedule.delta, schedule.delta_bar, schedule
    else:
        delta, delta_bar = schedule
        sched = None
    if not (delta > 0 and delta_bar > 0):
        raise ConfigurationError("tolerances must be positive")
    if bound is None and psi0_lower is not None:
        bound = uniform_inner_bound(p, psi0_lower)
    k_hat = draw_k_hat(seed, K)
    last = k_hat if stop_at_k_hat else K
    xs, f0s, psis, ys, res, Ts = [x], [p.psi0(x)], [p.psi(x)], [], [], []
    for k in range(1, last + 1):
        sub = build_subproblem(p, x)
        try:
            x_new, y, T = _conex_inner(sub, x, delta, delta_bar, k, seed, cfg, bound, output,
                                       max_T)
        except ConfigurationError:
            raise
        except Exception as err:
            raise ProxPointError(k, err) from err
        x = x_new
        xs.append(x)
        f0s.append(p.psi0(x))
        psis.append(p.psi(x))
        ys.append(y)
        res.append(kkt_residual(p, x, y))
        Ts.append(T)
    return ProxPointTrace(xs=np.array(xs), psi0=np.array(f0s), psi=np.array(psis),
                          ys=np.array(ys).reshape(len(ys), p.m), residuals=res, k_hat=k_hat,
                          inner_T=Ts, schedule=sched)
