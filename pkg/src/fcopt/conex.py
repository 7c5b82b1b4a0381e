"""Constraint-extrapolation primal-dual method with its two stepsize policies.

The loop keeps two cached linearizations of the constraints, forms the
extrapolated constraint value s_t, takes a projected dual ascent step and
then a prox step in the primal. The output is a weighted average of the
primal iterates; the last iterate is returned as well.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import _prox_core
from .oracles import NoiseConfig, sample_oracle
from .problems import ConfigurationError, aggregate_constants

SCHEDULES = ("strongly-convex", "convex", "custom")


class ScheduleError(ValueError):
    """Schedule prerequisites violated (e.g. zero strong convexity)."""


class ConExError(RuntimeError):
    """A sub-operation failed inside the main loop."""

    def __init__(self, t, cause):
        super().__init__(f"iteration {t}: {cause}")
        self.t = t
        self.cause = cause


@dataclass
class ConExParams:
    """Run parameters.

    Parameters
    ----------
    T : int
        Iteration budget.
    B : float
        Dual bound guess, at least 1.
    schedule : {"strongly-convex", "convex", "custom"}
    H_knob : {"B", "star"}
        Which nonsmoothness constant the convex policy uses: H0 + B*H_f, or
        the starred version that needs ``y_norm``.
    y_norm : float, optional
        Estimate of the optimal dual norm.
    H_floor : float
        Replaces a zero nonsmoothness constant in the convex policy.
    custom_schedule : callable, optional
        ``t -> (gamma, eta, tau, theta)`` for the custom policy.
    x0 : array, optional
        Starting point, defaults to the centroid of X.
    trace : {"none", "checkpoints", "all"}
    checkpoints : int
        Number of checkpoint levels T, T/2, T/4, ...
    psi0_star : float, optional
        Reference optimal value; enables gap columns in the trace.
    x_star : array, optional
        Reference solution; enables last-iterate distance in the trace.
    debug : bool
        Assert the schedule coupling conditions at every step.
    """
    T: int
    B: float = 1.0
    schedule: str = "strongly-convex"
    H_knob: str = "B"
    y_norm: float = None
    H_floor: float = 0.0
    custom_schedule: object = None
    x0: np.ndarray = None
    trace: str = "none"
    checkpoints: int = 8
    psi0_star: float = None
    x_star: np.ndarray = None
    debug: bool = False

    def __post_init__(self):
        if int(self.T) < 1:
            raise ValueError("T must be at least 1")
        self.T = int(self.T)
        if not self.B >= 1.0:
            raise ValueError("B must be at least 1")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.H_knob not in ("B", "star"):
            raise ValueError("H_knob must be 'B' or 'star'")
        if self.trace not in ("none", "checkpoints", "all"):
            raise ValueError("trace must be 'none', 'checkpoints' or 'all'")
        if self.schedule == "custom" and self.custom_schedule is None:
            raise ValueError("custom schedule requires custom_schedule")


@dataclass(frozen=True)
class ScheduleConstants:
    """All problem and noise constants entering the stepsize policies."""
    T: int
    B: float
    alpha0: float
    L0: float
    L_f: float
    H0: float
    H_f: float
    M_f: float
    M_chi: float
    calM: float
    D_X: float
    sigma0: float
    sigma_norm: float
    sigma_f: float

    @property
    def sigma_Xf(self):
        return math.sqrt(self.sigma_f ** 2 + self.D_X ** 2 * self.sigma_norm ** 2)

    @property
    def t0(self):
        if not self.alpha0 > 0:
            raise ScheduleError("strongly convex policy needs alpha0 > 0")
        return 4.0 * (self.L0 + self.B * self.L_f) / self.alpha0 + 2.0


def schedule_constants(p, cfg, T, B):
    agg = aggregate_constants(p)
    return ScheduleConstants(
        T=int(T), B=float(B), alpha0=float(p.alpha0), L0=float(p.L0), L_f=agg.L_f,
        H0=float(p.H0), H_f=agg.H_f, M_f=agg.M_f, M_chi=agg.M_chi, calM=agg.calM,
        D_X=p.geometry.diameter(), sigma0=cfg.sigma0, sigma_norm=cfg.sigma_norm,
        sigma_f=cfg.sigma_f)


def schedule_strongly_convex(t, c):
    """(gamma_t, eta_t, tau_t, theta_t) of the strongly convex policy."""
    if not c.alpha0 > 0:
        raise ScheduleError("strongly convex policy needs alpha0 > 0")
    t0 = c.t0
    T = c.T
    gamma = t + t0 + 2.0
    eta = c.alpha0 * (t + t0 + 1.0) / 2.0
    theta = (t + t0 + 1.0) / (t + t0 + 2.0)
    tau = max(32.0 * c.calM ** 2 / c.alpha0,
              384.0 * c.sigma_norm ** 2 * T / c.alpha0,
              c.sigma_Xf * T ** 1.5 / (c.B * math.sqrt(t0 + 2.0))) / (t + 1.0)
    return gamma, eta, tau, theta


def convex_H(c, H_knob="B", y_norm=None, H_floor=0.0):
    """Nonsmoothness constant used by the convex policy."""
    if H_knob == "star":
        if y_norm is None:
            raise ConfigurationError("H_knob='star' needs a dual norm estimate")
        H = c.H0 + (y_norm + 1.0) * c.H_f + c.L_f * c.D_X * max(y_norm + 1.0 - c.B, 0.0) / 2.0
    else:
        H = c.H0 + c.B * c.H_f
    if H == 0.0 and H_floor > 0.0:
        H = H_floor
    return H


def schedule_convex(c, H_knob="B", y_norm=None, H_floor=0.0):
    """Constant (gamma, eta_t, tau, theta) of the convex policy."""
    if not c.D_X > 0:
        raise ScheduleError("degenerate feasible set: D_X = 0")
    H = convex_H(c, H_knob, y_norm, H_floor)
    big = max(c.calM, 4.0 * c.sigma_norm)
    eta = max(math.sqrt(2.0 * c.T * (H ** 2 + c.sigma0 ** 2 + 48.0 * c.B ** 2 * c.sigma_norm ** 2)) / c.D_X,
              6.0 * c.B * big / c.D_X)
    tau = max(math.sqrt(96.0 * c.T) * c.sigma_Xf / c.B, 2.0 * c.D_X * big / c.B)
    return 1.0, c.L0 + c.B * c.L_f + eta, tau, 1.0


def extrapolate_constraints(chi_t, lF_t, chi_prev, lF_prev, theta):
    """s_t = (1 + theta)[chi(x_t) + l_F(x_t)] - theta[chi(x_{t-1}) + l_F(x_{t-1})]."""
    return (1.0 + theta) * (chi_t + lF_t) - theta * (chi_prev + lF_prev)


def dual_ascent(y, s, tau):
    """y_{t+1} = [y_t + s_t / tau_t]_+."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return np.maximum(np.asarray(y, dtype=float) + np.asarray(s, dtype=float) / tau, 0.0)


def primal_prox(p, x, y_next, G0, G, eta):
    """Prox step with weights y_{t+1}, linear term G0 + G y_{t+1}, center x_t."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    v = G0 + G @ y_next
    for wi, c in zip(y_next, p.chis):
        if c.kind == "linear" and wi != 0.0:
            v = v + wi * c.coef
    return _prox_core(p.geometry, p.chi0, v, x, eta)


@dataclass
class ConExResult:
    x_bar: np.ndarray
    x_last: np.ndarray
    y_last: np.ndarray
    schedule: np.ndarray
    trace: dict = field(default_factory=dict)
    params: ConExParams = None


def checkpoint_indices(T, levels=8):
    """Iteration counts T, T/2, ..., T/2^(levels-1), ascending, deduplicated."""
    pts = {max(1, int(round(T / 2 ** k))) for k in range(levels)}
    return sorted(pts)


def _schedule_fn(params, c):
    if params.schedule == "strongly-convex":
        c.t0  # raises early when alpha0 = 0
        return lambda t: schedule_strongly_convex(t, c)
    if params.schedule == "convex":
        row = schedule_convex(c, params.H_knob, params.y_norm, params.H_floor)
        return lambda t: row
    return params.custom_schedule


def _check_coupling(prev, cur, alpha0, tol=1e-9):
    g0, e0, t0, _ = prev
    g1, e1, t1, th1 = cur
    scale = max(1.0, abs(g0))
    assert abs(g1 * th1 - g0) <= tol * scale, "gamma_t theta_t != gamma_{t-1}"
    assert g1 * t1 <= g0 * t0 * (1 + tol), "gamma_t tau_t > gamma_{t-1} tau_{t-1}"
    assert g1 * e1 <= g0 * (e0 + alpha0) * (1 + tol), "gamma_t eta_t too large"


def run_conex(p, cfg=None, params=None, seed=0):
    """Run the method for params.T iterations.

    Draw ids 2t and 2t+1 address the two independent samples of
    iteration t (the prox sample and the one behind the next linearization).
    """
    cfg = NoiseConfig() if cfg is None else cfg
    T = params.T
    c = schedule_constants(p, cfg, T, params.B)
    sched = _schedule_fn(params, c)
    custom = params.schedule == "custom"
    floor_eta = c.L0 + c.B * c.L_f

    X = p.X
    x = X.centroid() if params.x0 is None else np.array(params.x0, dtype=float)
    if not X.contains(x):
        raise ValueError("starting point is outside X")
    m = p.m
    y = np.zeros(m)
    C = np.column_stack([ci.coef if ci.kind == "linear" else np.zeros(p.n) for ci in p.chis]) \
        if m else np.zeros((p.n, 0))
    cconst = np.array([ci.const if ci.kind == "linear" else 0.0 for ci in p.chis])
    geom, chi0 = p.geometry, p.chi0
    stochastic = cfg.regime != "deterministic"

    def exact_at(z):
        if p.first_order is not None:
            return p.first_order(z)
        g0 = np.asarray(p.f0_grad(z), dtype=float)
        G = np.asarray(p.f_jac(z), dtype=float).reshape(p.n, m)
        F = np.asarray(p.f(z), dtype=float).reshape(m)
        return g0, G, F

    # warm start: the xi_bar_0 sample at x_0 gives l_F(x_0) = l_F(x_{-1}) = F(x_0)
    ex = exact_at(x)
    bar = sample_oracle(p, cfg, x, seed, 1, exact=ex) if stochastic else None
    Fb, Gb = (bar.F, bar.G) if stochastic else (ex[2], ex[1])
    lF = Fb.copy()
    lF_prev = lF
    chi = C.T @ x + cconst
    chi_prev = chi

    acc = np.zeros(p.n)
    wsum = 0.0
    sched_rows = np.empty((T, 4))
    mode = params.trace
    cps = set(checkpoint_indices(T, params.checkpoints)) if mode == "checkpoints" else None
    rows = []
    prev_row = None
    for t in range(T):
        try:
            row = sched(t)
            gamma, eta, tau, theta = row
            # tau is unused without constraints (and is 0 there since calM = 0)
            if not (eta > 0 and gamma > 0 and (tau > 0 or p.m == 0)):
                raise ScheduleError("stepsizes must be positive")
            if custom and eta - floor_eta <= 0:
                raise ScheduleError("eta_t - L0 - B*L_f must be positive")
            if params.debug and prev_row is not None:
                _check_coupling(prev_row, row, c.alpha0)
            prev_row = row
            sched_rows[t] = row
            s = (1.0 + theta) * (chi + lF) - theta * (chi_prev + lF_prev)
            if p.m:
                y = np.maximum(y + s / tau, 0.0)
            if t > 0:
                ex = exact_at(x)
                if stochastic:
                    bar = sample_oracle(p, cfg, x, seed, 2 * t + 1, exact=ex)
                    Fb, Gb = bar.F, bar.G
                else:
                    Fb, Gb = ex[2], ex[1]
            if stochastic:
                smp = sample_oracle(p, cfg, x, seed, 2 * t, exact=ex)
                G0, G = smp.G0, smp.G
            else:
                G0, G = ex[0], ex[1]
            v = G0 + (G + C) @ y
            x_new = _prox_core(geom, chi0, v, x, eta)
        except (ScheduleError, AssertionError):
            raise
        except Exception as err:  # attach the iteration index
            raise ConExError(t, err) from err
        lF_prev, chi_prev = lF, chi
        lF = Fb + Gb.T @ (x_new - x)
        chi = C.T @ x_new + cconst
        acc += gamma * x_new
        wsum += gamma
        x = x_new
        if mode == "all" or (cps is not None and (t + 1) in cps):
            rows.append(_trace_row(p, t + 1, acc / wsum, x, y, params))
    trace = {}
    if rows:
        keys = rows[0].keys()
        trace = {k: np.array([r[k] for r in rows]) for k in keys}
    return ConExResult(x_bar=acc / wsum, x_last=x, y_last=y, schedule=sched_rows,
                       trace=trace, params=params)


def _trace_row(p, t, xbar, x, y, params):
    psi0 = p.psi0(xbar)
    psi = p.psi(xbar) if p.m else np.zeros(0)
    row = dict(t=t, psi0=psi0, infeas=float(np.linalg.norm(np.maximum(psi, 0.0))),
               y_norm=float(np.linalg.norm(y)))
    if params.psi0_star is not None:
        row["gap"] = psi0 - params.psi0_star
    if params.x_star is not None:
        row["W_last"] = p.geometry.W(params.x_star, x)
    return row


# ---------------------------------------------------------------------------
# iteration counts
# ---------------------------------------------------------------------------

def iterations_for_accuracy(eps, p, cfg=None, B=1.0, y_norm=None, schedule="strongly-convex",
                            target="gap", H_knob="B", H_floor=0.0):
    """Iteration count guaranteeing accuracy eps.

    Parameters
    ----------
    eps : float
    p : ConstrainedProblem
    cfg : NoiseConfig
    B : float
    y_norm : float
        Estimate of the optimal dual norm (required).
    schedule : {"strongly-convex", "convex"}
    target : {"gap", "last"}
        "gap" gives the (eps, eps)-optimality count; "last" the count for
        W(x*, x_T) <= eps (strongly convex policy only).
    """
    if not eps > 0:
        raise ConfigurationError("eps must be positive")
    if y_norm is None:
        raise ConfigurationError("a dual norm estimate y_norm is required")
    cfg = NoiseConfig() if cfg is None else cfg
    c = schedule_constants(p, cfg, 1, B)
    terms = count_terms(eps, c, y_norm, schedule, target, H_knob, H_floor)
    return int(math.ceil(max(terms)))


def count_terms(eps, c, y_norm, schedule="strongly-convex", target="gap", H_knob="B",
                H_floor=0.0):
    """The individual terms whose maximum is the iteration count."""
    agg_H = c.H0 + (y_norm + 1.0) * c.H_f + c.L_f * c.D_X * max(y_norm + 1.0 - c.B, 0.0) / 2.0
    yp1 = y_norm + 1.0
    sn, s0, sX, D, B = c.sigma_norm, c.sigma0, c.sigma_Xf, c.D_X, c.B
    if schedule == "strongly-convex":
        a0, t0 = c.alpha0, c.t0
        zeta = 2.0 * math.e * math.sqrt(
            s0 ** 2 + 12.0 * (t0 + 3.0) * sn ** 2 * y_norm ** 2
            + 96.0 * (t0 + 2.0) * B ** 2 * sn ** 2 + agg_H ** 2 / 2.0
            + 3.0 * a0 * B * sX * (t0 + 2.0) ** 1.5 / 2.0)
        common = zeta ** 2 + agg_H ** 2 + 144.0 * (t0 + 2.0) * yp1 ** 2 * sn ** 2
        if target == "gap":
            return [
                math.sqrt(5.0 * a0 * (t0 + 2.0) * (t0 + 1.0) * D ** 2 / eps
                          + 960.0 * (t0 + 2.0) * yp1 ** 2 * c.calM ** 2 / (a0 * eps)),
                (65.0 * B * sX * (t0 + 2.0) ** 1.5 / eps) ** (2.0 / 3.0),
                80.0 * common / (a0 * eps),
                (30.0 * yp1 ** 2 * sX / B) * (t0 + 2.0) / eps ** 2,
                (130.0 * B * sX / 3.0) ** 2 * (t0 + 2.0) / eps ** 2,
            ]
        if target == "last":
            return [
                math.sqrt(5.0 * (t0 + 2.0) * (t0 + 1.0) * D ** 2 / eps
                          + 960.0 * (t0 + 2.0) * yp1 ** 2 * c.calM ** 2 / (a0 ** 2 * eps)),
                (60.0 * B * sX * (t0 + 2.0) ** 1.5 / (a0 * eps)) ** (2.0 / 3.0),
                80.0 * common / (a0 ** 2 * eps),
                (5.0 * y_norm ** 2 * sX / (B * a0)) ** 2 * (t0 + 2.0) / eps ** 2,
                (40.0 * B * sX / a0) ** 2 * (t0 + 2.0) / eps ** 2,
            ]
        raise ConfigurationError(f"unknown target {target!r}")
    if schedule == "convex":
        if target != "gap":
            raise ConfigurationError("the convex policy only has a gap count")
        zeta = 2.0 * math.e * math.sqrt(
            s0 ** 2 + sn ** 2 * (14.0 * y_norm ** 2 + 123.0 * B ** 2)
            + 2.0 * math.sqrt(3.0) * sn * (2.0 * B * agg_H + B * s0))
        H_step = agg_H if H_knob == "star" else c.H0 + B * c.H_f
        if H_step == 0.0 and H_floor > 0.0:
            H_step = H_floor
        root = math.sqrt(H_step ** 2 + s0 ** 2 + 48.0 * B ** 2 * sn ** 2)
        num = zeta ** 2 + agg_H ** 2
        if root == 0.0:
            if num > 0.0:
                raise ConfigurationError("no finite count: set a positive H_floor")
            third = 0.0
        else:
            third = 18.0 / eps ** 2 * (D * root + D * num / root) ** 2
        return [
            (3.0 * (c.L0 + B * c.L_f) * D ** 2 + max(36.0 * c.calM, 144.0 * sn) * yp1 * D) / eps,
            (36.0 * math.sqrt(6.0) * yp1 ** 2 / B + 13.0 * math.sqrt(3.0) * B / (4.0 * math.sqrt(2.0))) ** 2
            * sX ** 2 / eps ** 2,
            third,
        ]
    raise ConfigurationError(f"unknown schedule {schedule!r}")
