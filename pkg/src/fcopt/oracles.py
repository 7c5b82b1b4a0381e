"""Stochastic first-order oracle with three noise regimes.

Every draw is addressed by (seed, draw_id), so a sample can be reproduced
bit for bit and two different draw ids give independent samples.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .problems import subgradient_eval

REGIMES = ("deterministic", "semi-stochastic", "fully-stochastic")


@dataclass(frozen=True)
class NoiseConfig:
    """Noise regime and variance levels.

    Parameters
    ----------
    regime : {"deterministic", "semi-stochastic", "fully-stochastic"}
    sigma0 : float
        Bound on E||G_0 - f_0'||_*^2 (as a standard deviation).
    sigma : sequence of float, optional
        Per-constraint bounds for the G_i.
    sigma_f : float
        Bound on E||F - f||_2^2 (as a standard deviation).
    law : {"gaussian", "scenario"}
        Additive Gaussian noise meeting the bounds with equality, or
        uniform subsampling of a problem's scenario pool.
    noise_scale : float
        Multiplies the actual noise without touching the declared sigmas.
        Only useful to simulate a misconfigured sampler.
    """
    regime: str = "deterministic"
    sigma0: float = 0.0
    sigma: tuple = None
    sigma_f: float = 0.0
    law: str = "gaussian"
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.law not in ("gaussian", "scenario"):
            raise ValueError(f"unknown noise law {self.law!r}")
        sig = () if self.sigma is None else tuple(float(s) for s in np.atleast_1d(self.sigma))
        object.__setattr__(self, "sigma", sig)
        if self.sigma0 < 0 or self.sigma_f < 0 or any(s < 0 for s in sig):
            raise ValueError("noise levels must be nonnegative")
        if self.regime == "deterministic" and (self.sigma0 or self.sigma_f or any(sig)):
            raise ValueError("deterministic regime requires all sigmas to be zero")
        if self.regime == "semi-stochastic" and (self.sigma_f or any(sig)):
            raise ValueError("semi-stochastic regime only allows objective noise")

    @property
    def sigma_norm(self):
        return float(np.linalg.norm(self.sigma)) if self.sigma else 0.0

    def sigma_vec(self, m):
        if not self.sigma:
            return np.zeros(m)
        if len(self.sigma) != m:
            raise ValueError("one sigma per constraint is required")
        return np.array(self.sigma)

    @classmethod
    def for_scenarios(cls, p, regime):
        """Declared bounds of a scenario-pool problem for the given regime."""
        nb = p.params["noise_bounds"]
        if regime == "deterministic":
            return cls(regime)
        if regime == "semi-stochastic":
            return cls(regime, sigma0=nb["sigma0"], law="scenario")
        return cls(regime, sigma0=nb["sigma0"], sigma=tuple(nb["sigma"]),
                   sigma_f=nb["sigma_f"], law="scenario")


@dataclass(frozen=True, eq=False)
class OracleSample:
    G0: np.ndarray
    G: np.ndarray
    F: np.ndarray
    draw_id: int


@lru_cache(maxsize=None)
def _max_sq_gauss(n):
    """E[max_j Z_j^2] for n independent standard normals."""
    if n == 1:
        return 1.0
    val, _ = integrate.quad(lambda u: 1.0 - special.erf(np.sqrt(u / 2.0)) ** n, 0.0, np.inf,
                            epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def _component_scale(omega, n):
    """Per-coordinate std making E||delta||_*^2 = 1 for iid Gaussian delta."""
    if omega.dual_ord == 2:
        return 1.0 / np.sqrt(n)
    return 1.0 / np.sqrt(_max_sq_gauss(n))


def make_rng(seed, draw_id):
    return np.random.default_rng([int(seed), int(draw_id)])


def sample_oracle(p, cfg, x, seed, draw_id, exact=None):
    """One oracle draw (G_0, G, F) at x.

    Parameters
    ----------
    p : ConstrainedProblem
    cfg : NoiseConfig
    x : array
    seed, draw_id : int
        Address of the draw. Distinct draw ids are independent.
    exact : tuple, optional
        Precomputed (f0'(x), f'(x), f(x)) to avoid re-evaluation.
    """
    if exact is None:
        g0, G = subgradient_eval(p, x)
        F = np.asarray(p.f(x), dtype=float).reshape(p.m)
    else:
        g0, G, F = exact
    if cfg.regime == "deterministic":
        return OracleSample(g0, G, F, draw_id)
    rng = make_rng(seed, draw_id)
    k = cfg.noise_scale
    full = cfg.regime == "fully-stochastic"
    if cfg.law == "scenario":
        j = rng.integers(p.scenarios.size)
        s0, sG, sF = p.scenarios.per_scenario(x, np.array([j]))
        G0 = g0 + k * (s0[0] - g0)
        if full:
            G = G + k * (sG[0] - G)
            F = F + k * (sF[0] - F)
        return OracleSample(G0, G, F, draw_id)
    n, m = p.n, p.m
    c = _component_scale(p.geometry.omega, n)
    G0 = g0 + (k * cfg.sigma0 * c) * rng.standard_normal(n)
    if full:
        sig = cfg.sigma_vec(m)
        G = G + (k * c) * rng.standard_normal((n, m)) * sig
        if m:
            F = F + (k * cfg.sigma_f / np.sqrt(m)) * rng.standard_normal(m)
    return OracleSample(G0, G, F, draw_id)


def model_variances(p, cfg, x):
    """Exact noise second moments of the sampler at x (as configured)."""
    m = p.m
    if cfg.regime == "deterministic":
        return 0.0, np.zeros(m), 0.0
    full = cfg.regime == "fully-stochastic"
    if cfg.law == "scenario":
        v0, vi, vf = p.scenarios.variances(x)
        if not full:
            vi, vf = np.zeros(m), 0.0
        return v0, np.asarray(vi), vf
    if not full:
        return cfg.sigma0 ** 2, np.zeros(m), 0.0
    return cfg.sigma0 ** 2, cfg.sigma_vec(m) ** 2, cfg.sigma_f ** 2 if m else 0.0


@dataclass(frozen=True)
class OracleReport:
    draws: int
    bias_G0: float
    bias_G: np.ndarray
    bias_F: float
    var_G0: float
    var_G: np.ndarray
    var_F: float
    model_G0: float
    model_G: np.ndarray
    model_F: float
    bias_ok: bool
    variance_ok: bool
    bound_ok: bool

    @property
    def passed(self):
        return self.bias_ok and self.variance_ok and self.bound_ok


def _moment_ok(emp, model, rtol):
    if model == 0.0:
        return emp == 0.0
    return abs(emp / model - 1.0) <= rtol


def verify_oracle_stats(p, cfg, x, draws=10 ** 5, seed=0, rtol=0.05):
    """Monte-Carlo check of unbiasedness and second moments at x.

    Bias passes when every coordinate of the sample mean is within three
    standard errors of the exact value. Variance passes when the empirical
    second moment around the exact value is within ``rtol`` of the model
    value, and the model value respects the declared sigma bound.
    """
    if draws < 1000:
        raise ValueError("at least 1000 draws are required")
    x = np.asarray(x, dtype=float)
    g0, G = subgradient_eval(p, x)
    F = np.asarray(p.f(x), dtype=float).reshape(p.m)
    exact = (g0, G, F)
    S0 = np.empty((draws, p.n))
    SG = np.empty((draws, p.n, p.m))
    SF = np.empty((draws, p.m))
    for k in range(draws):
        s = sample_oracle(p, cfg, x, seed, k, exact=exact)
        S0[k], SG[k], SF[k] = s.G0, s.G, s.F
    dn = p.geometry.omega.dual_ord
    d0, dG, dF = S0 - g0, SG - G, SF - F
    var0 = float(np.mean(np.linalg.norm(d0, ord=dn, axis=1) ** 2)) if p.n else 0.0
    varG = np.array([np.mean(np.linalg.norm(dG[:, :, i], ord=dn, axis=1) ** 2)
                     for i in range(p.m)])
    varF = float(np.mean((dF ** 2).sum(axis=1)))

    def bias_within(d):
        if d.size == 0:
            return True
        flat = d.reshape(draws, -1)
        mean = flat.mean(axis=0)
        se = flat.std(axis=0) / np.sqrt(draws)
        return bool(np.all(np.abs(mean) <= 3.0 * se + 1e-15))

    mv0, mvG, mvF = model_variances(p, cfg, x)
    bias_ok = bias_within(d0) and bias_within(dG) and bias_within(dF)
    var_ok = (_moment_ok(var0, mv0, rtol) and _moment_ok(varF, mvF, rtol)
              and all(_moment_ok(a, b, rtol) for a, b in zip(varG, mvG)))
    slack = 1.0 + 1e-12
    sig = cfg.sigma_vec(p.m)
    bound_ok = (mv0 <= cfg.sigma0 ** 2 * slack and mvF <= cfg.sigma_f ** 2 * slack
                and bool(np.all(mvG <= sig ** 2 * slack)))
    return OracleReport(
        draws=draws,
        bias_G0=float(np.linalg.norm(d0.mean(axis=0))),
        bias_G=np.linalg.norm(dG.mean(axis=0), axis=0),
        bias_F=float(np.linalg.norm(dF.mean(axis=0))),
        var_G0=var0, var_G=varG, var_F=varF,
        model_G0=float(mv0), model_G=np.asarray(mvG, dtype=float), model_F=float(mvF),
        bias_ok=bias_ok, variance_ok=var_ok, bound_ok=bound_ok)
