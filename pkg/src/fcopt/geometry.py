"""Feasible sets, distance generating functions and the composite prox step.

Everything here is a pure function of its inputs. Sets and distance
generators are immutable once built.
"""
from dataclasses import dataclass, field

import numpy as np

MEMBERSHIP_TOL = 1e-12
ENTROPY_FLOOR = 1e-9


class DomainError(ValueError):
    """A point lies outside the domain of an operation."""


class CapabilityError(ValueError):
    """The requested (composite term, geometry) pairing has no closed-form prox."""


# ---------------------------------------------------------------------------
# feasible sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FeasibleSet:
    """Compact convex set: a box, a Euclidean ball or the unit simplex.

    Use the ``box``, ``ball`` and ``simplex`` constructors rather than
    calling the class directly.
    """
    kind: str
    n: int
    lower: np.ndarray = None
    upper: np.ndarray = None
    center: np.ndarray = None
    radius: float = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("dimension must be positive")
        if self.kind == "box":
            lo = np.asarray(self.lower, dtype=float)
            hi = np.asarray(self.upper, dtype=float)
            if lo.shape != (self.n,) or hi.shape != (self.n,):
                raise ValueError("box bounds must have shape (n,)")
            if not np.all(lo < hi):
                raise ValueError("box requires lower < upper in every coordinate")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
        elif self.kind == "ball":
            c = np.asarray(self.center, dtype=float)
            if c.shape != (self.n,):
                raise ValueError("ball center must have shape (n,)")
            if not (self.radius is not None and self.radius > 0):
                raise ValueError("ball radius must be positive")
            object.__setattr__(self, "center", c)
            object.__setattr__(self, "radius", float(self.radius))
        elif self.kind == "simplex":
            if self.n < 2:
                raise ValueError("simplex requires dimension >= 2")
        else:
            raise ValueError(f"unknown set kind {self.kind!r}")

    @classmethod
    def box(cls, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        return cls("box", lower.size, lower=lower, upper=upper)

    @classmethod
    def ball(cls, center, radius):
        center = np.atleast_1d(np.asarray(center, dtype=float))
        return cls("ball", center.size, center=center, radius=radius)

    @classmethod
    def simplex(cls, n):
        return cls("simplex", int(n))

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,) or not np.all(np.isfinite(x)):
            return False
        if self.kind == "box":
            return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))
        if self.kind == "ball":
            return bool(np.linalg.norm(x - self.center) <= self.radius + tol)
        return bool(np.all(x >= -tol) and abs(x.sum() - 1.0) <= tol)

    def centroid(self):
        """A canonical interior point (box/ball center, simplex barycenter)."""
        if self.kind == "box":
            return 0.5 * (self.lower + self.upper)
        if self.kind == "ball":
            return self.center.copy()
        return np.full(self.n, 1.0 / self.n)

    def sample(self, rng, size):
        """Uniform-ish random points of the set, shape (size, n)."""
        if self.kind == "box":
            return rng.uniform(self.lower, self.upper, size=(size, self.n))
        if self.kind == "ball":
            d = rng.standard_normal((size, self.n))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            r = self.radius * rng.uniform(size=(size, 1)) ** (1.0 / self.n)
            return self.center + r * d
        return rng.dirichlet(np.ones(self.n), size=size)


# ---------------------------------------------------------------------------
# distance generating functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistanceGenerator:
    """omega(x) = 0.5*||x||^2 ("euclidean") or sum x log x ("entropy").

    The entropy generator lives on the simplex truncated at ``floor``; its
    gradient is Lipschitz there with constant 1/floor in the l1 norm.
    """
    kind: str = "euclidean"
    floor: float = ENTROPY_FLOOR

    def __post_init__(self):
        if self.kind not in ("euclidean", "entropy"):
            raise ValueError(f"unknown distance generator {self.kind!r}")

    @property
    def L_omega(self):
        return 1.0 if self.kind == "euclidean" else 1.0 / self.floor

    @property
    def norm_ord(self):
        """Order of the primal norm paired with omega."""
        return 2 if self.kind == "euclidean" else 1

    @property
    def dual_ord(self):
        return 2 if self.kind == "euclidean" else np.inf

    def norm(self, x):
        return float(np.linalg.norm(np.asarray(x, dtype=float), ord=self.norm_ord))

    def dual_norm(self, x):
        return float(np.linalg.norm(np.asarray(x, dtype=float), ord=self.dual_ord))


def _check_entropy_point(x, strict):
    x = np.asarray(x, dtype=float)
    if strict and np.any(x <= 0.0):
        raise DomainError("entropy generator needs strictly positive coordinates here")
    if np.any(x < 0.0):
        raise DomainError("entropy generator needs nonnegative coordinates")
    return x


def grad_omega(omega, x):
    """Gradient of the distance generating function."""
    x = np.asarray(x, dtype=float)
    if omega.kind == "euclidean":
        return x.copy()
    x = _check_entropy_point(x, strict=True)
    return 1.0 + np.log(x)


def bregman_div(omega, y, x):
    """W(y, x) = omega(y) - omega(x) - <grad omega(x), y - x>."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if omega.kind == "euclidean":
        d = y - x
        return 0.5 * float(d @ d)
    x = _check_entropy_point(x, strict=True)
    y = _check_entropy_point(y, strict=False)
    pos = y > 0
    val = np.sum(y[pos] * np.log(y[pos] / x[pos])) - y.sum() + x.sum()
    return max(float(val), 0.0)


# ---------------------------------------------------------------------------
# geometry = set + generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Geometry:
    X: FeasibleSet
    omega: DistanceGenerator = field(default_factory=DistanceGenerator)

    def __post_init__(self):
        if self.omega.kind == "entropy" and self.X.kind != "simplex":
            raise CapabilityError("entropy generator is only supported on the simplex")

    @property
    def n(self):
        return self.X.n

    @property
    def L_omega(self):
        return self.omega.L_omega

    def diameter(self):
        return diameter(self.X, self.omega)

    def W(self, y, x):
        return bregman_div(self.omega, y, x)

    def initial_point(self):
        return self.X.centroid()


def diameter(X, omega):
    """D_X = max over x, y in X of sqrt(2 W(x, y)).

    Exact for the Euclidean generator. For entropy the truncated-simplex
    bound sqrt(2 ln(n / floor)) is returned.
    """
    if omega.kind == "entropy":
        return float(np.sqrt(2.0 * np.log(X.n / omega.floor)))
    if X.kind == "box":
        return float(np.linalg.norm(X.upper - X.lower))
    if X.kind == "ball":
        return 2.0 * X.radius
    return float(np.sqrt(2.0))


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------

def _project_simplex(z):
    # sort-based projection (Held, Wolfe and Crowder; Duchi et al.)
    u = np.sort(z)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, z.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(z - theta, 0.0)


def project_feasible(X, z):
    """Euclidean projection of z onto X."""
    z = np.asarray(z, dtype=float)
    if X.kind == "box":
        return np.minimum(np.maximum(z, X.lower), X.upper)
    if X.kind == "ball":
        d = z - X.center
        nd = np.linalg.norm(d)
        if nd <= X.radius:
            return z.copy()
        return X.center + d * (X.radius / nd)
    return _project_simplex(z)


def _kl_project_truncated(logw, floor):
    """argmin over {x >= floor, sum x = 1} of KL(x || w), w = softmax(logw)."""
    w = np.exp(logw - logw.max())
    w /= w.sum()
    clipped = np.zeros(w.size, dtype=bool)
    for _ in range(w.size + 1):
        free = ~clipped
        scale = (1.0 - floor * clipped.sum()) / w[free].sum()
        new = clipped | (scale * w < floor)
        if np.array_equal(new, clipped):
            break
        clipped = new
    x = np.where(clipped, floor, scale * w)
    return x / x.sum()


def normal_cone_project(X, x, z, tol=1e-10):
    """Euclidean projection of z onto the normal cone N_X(x).

    ``tol`` decides which faces of X count as active at x.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if X.kind == "box":
        at_lo = x <= X.lower + tol
        at_hi = x >= X.upper - tol
        out = np.zeros_like(z)
        out[at_lo] = np.minimum(z[at_lo], 0.0)
        out[at_hi] = np.maximum(z[at_hi], 0.0)
        return out
    if X.kind == "ball":
        d = x - X.center
        nd = np.linalg.norm(d)
        if nd < X.radius - tol:
            return np.zeros_like(z)
        u = d / nd
        return max(float(z @ u), 0.0) * u
    # simplex: N = {lam*1 - mu : mu >= 0, mu_j = 0 where x_j > 0}; return z - P_T(z)
    zero = x <= tol
    return z - _tangent_project_simplex(z, zero)


def _tangent_project_simplex(z, zero):
    """Project z onto {d : sum d = 0, d_j >= 0 for j in zero}."""
    pos = ~zero
    zz = np.sort(z[zero])[::-1]
    base = z[pos].sum()
    npos = pos.sum()
    lam = None
    for k in range(zz.size + 1):
        cnt = npos + k
        if cnt == 0:
            continue
        cand = (base + zz[:k].sum()) / cnt
        hi_ok = k == 0 or zz[k - 1] >= cand
        lo_ok = k == zz.size or zz[k] <= cand
        if hi_ok and lo_ok:
            lam = cand
            break
    if lam is None:  # every coordinate sits on a face; only d = 0 survives
        return np.zeros_like(z)
    d = z - lam
    d[zero] = np.maximum(d[zero], 0.0)
    return d


# ---------------------------------------------------------------------------
# composite terms and the prox step
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CompositeTerm:
    """A simple convex term chi handled by the prox.

    kind is "zero", "linear" (chi(x) = <c, x> + d) or "l1" (chi(x) = lam*||x||_1).
    """
    kind: str = "zero"
    coef: np.ndarray = None
    const: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        if self.kind == "linear":
            object.__setattr__(self, "coef", np.asarray(self.coef, dtype=float))
        elif self.kind == "l1":
            if self.lam < 0:
                raise ValueError("l1 weight must be nonnegative")
        elif self.kind != "zero":
            raise ValueError(f"unknown composite kind {self.kind!r}")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def linear(cls, coef, const=0.0):
        return cls("linear", coef=coef, const=float(const))

    @classmethod
    def l1(cls, lam):
        return cls("l1", lam=float(lam))

    def value(self, x):
        if self.kind == "zero":
            return 0.0
        if self.kind == "linear":
            return float(self.coef @ x) + self.const
        return self.lam * float(np.abs(x).sum())

    def subgradient(self, x):
        """Minimal-norm subgradient (0 at the kinks of |.|)."""
        if self.kind == "zero":
            return np.zeros_like(x, dtype=float)
        if self.kind == "linear":
            return self.coef.copy()
        return self.lam * np.sign(x)

    def lipschitz(self, n, omega=None):
        """Lipschitz constant with respect to the generator's primal norm."""
        dual = 2 if omega is None else omega.dual_ord
        if self.kind == "zero":
            return 0.0
        if self.kind == "linear":
            return float(np.linalg.norm(self.coef, ord=dual))
        e = np.ones(n)
        return self.lam * float(np.linalg.norm(e, ord=dual))

    @property
    def is_affine(self):
        return self.kind in ("zero", "linear")


def check_prox_support(geom, chi0, chis):
    """Raise CapabilityError unless (chi0, chis, geometry) has a closed-form prox."""
    for c in chis:
        if not c.is_affine:
            raise CapabilityError("constraint composite parts must be zero or linear")
    if chi0.is_affine:
        return
    if chi0.kind == "l1" and geom.omega.kind == "euclidean" and geom.X.kind == "box":
        return
    raise CapabilityError(
        f"no closed-form prox for chi0={chi0.kind} with "
        f"{geom.omega.kind} generator on a {geom.X.kind}")


@dataclass(frozen=True, eq=False)
class ProxRequest:
    """Inputs of one prox step: weights w, linear term v, center x_tilde, scale eta."""
    w: np.ndarray
    v: np.ndarray
    x_tilde: np.ndarray
    eta: float
    chi0: CompositeTerm = field(default_factory=CompositeTerm.zero)
    chis: tuple = ()

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("prox scale eta must be positive")
        w = np.asarray(self.w, dtype=float)
        if np.any(w < 0):
            raise ValueError("prox weights must be nonnegative")
        if w.size != len(self.chis):
            raise ValueError("one weight per constraint composite part is required")


def prox_objective(geom, req, x):
    """The criterion minimized by prox_step, evaluated at x."""
    val = req.chi0.value(x) + float(np.asarray(req.v) @ x) + req.eta * geom.W(x, req.x_tilde)
    for wi, c in zip(np.asarray(req.w, dtype=float), req.chis):
        val += wi * c.value(x)
    return val


def prox_step(geom, req):
    """argmin over X of chi0(x) + sum w_i chi_i(x) + <v, x> + eta W(x, x_tilde)."""
    check_prox_support(geom, req.chi0, req.chis)
    v = np.array(req.v, dtype=float)
    for wi, c in zip(np.asarray(req.w, dtype=float), req.chis):
        if c.kind == "linear" and wi != 0.0:
            v += wi * c.coef
    return _prox_core(geom, req.chi0, v, np.asarray(req.x_tilde, dtype=float), float(req.eta))


def _prox_core(geom, chi0, v, xt, eta):
    # v already contains the weighted linear parts of chi_1..chi_m
    if chi0.kind == "linear":
        v = v + chi0.coef
    X = geom.X
    if geom.omega.kind == "entropy":
        logw = np.log(np.maximum(xt, geom.omega.floor)) - v / eta
        return _kl_project_truncated(logw, geom.omega.floor)
    z = xt - v / eta
    if chi0.kind == "l1":
        t = chi0.lam / eta
        z = np.sign(z) * np.maximum(np.abs(z) - t, 0.0)
        return np.clip(z, X.lower, X.upper)
    return project_feasible(X, z)
