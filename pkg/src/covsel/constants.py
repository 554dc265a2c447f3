"""Critical constants h for the homoscedastic and heteroscedastic procedures.

For a covariate value x with V = x'(X'X)^-1 x the procedures guarantee the
conditional PCS lower bound

    B(h, V) = int [ int Phi(h / sqrt(nu (1/t + 1/s) V)) p(s) ds ]^(k-1) p(t) dt

where p is the chi-squared(nu) density with nu = n0*m - d - 1 (hom) or the
density of the minimum of m chi-squared(n0 - 1) variables (het). h enters only
through c = h / sqrt(V), which is what the fast path exploits.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .design import (CovariateDistribution, CovariateSpace, DesignMatrix, ExpectationScheme,
                     covariate_rule, max_quadratic, quadratic_form)
from .numerics import QuadratureSpec, RootBracket

VARIANCE_MODES = ("hom", "het")
PCS_FORMS = ("expectation", "minimum")
DEFAULT_BRACKET = RootBracket(1e-3, 50.0)


class InvalidProblemError(ValueError):
    pass


@dataclass(frozen=True)
class HProblem:
    variance: str
    form: str
    k: int
    n0: int
    design: DesignMatrix
    alpha: float = 0.05
    dist: CovariateDistribution | None = None
    space: CovariateSpace | None = None
    scheme: ExpectationScheme = field(default_factory=ExpectationScheme)
    nodes: int = 64
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)

    def __post_init__(self):
        if self.variance not in VARIANCE_MODES:
            raise InvalidProblemError(f"variance mode must be one of {VARIANCE_MODES}")
        if self.form not in PCS_FORMS:
            raise InvalidProblemError(f"pcs form must be one of {PCS_FORMS}")
        if self.k < 2:
            raise InvalidProblemError("need k >= 2 alternatives")
        if not 0.0 < self.alpha < 1.0 - 1.0 / self.k:
            raise InvalidProblemError(
                f"alpha must lie in (0, 1 - 1/k) = (0, {1 - 1 / self.k:.4g}); got {self.alpha}")
        if self.form == "expectation" and self.dist is None:
            raise InvalidProblemError("expectation form needs a covariate distribution")
        if self.form == "minimum" and self.space is None:
            raise InvalidProblemError("minimum form needs a covariate space")
        if self.variance == "het" and self.n0 < 2:
            raise InvalidProblemError("heteroscedastic procedure needs n0 >= 2")
        if self.dof < 1:
            raise InvalidProblemError(f"degrees of freedom n0*m-d-1 = {self.dof} < 1")
        if self.nodes < 8:
            raise InvalidProblemError("need at least 8 quadrature nodes")

    @property
    def dof(self) -> int:
        if self.variance == "hom":
            return self.n0 * self.design.m - self.design.d - 1
        return self.n0 - 1

    @property
    def order(self) -> int:
        """Number of chi-squares whose minimum drives the bound (1 for hom)."""
        return 1 if self.variance == "hom" else self.design.m

    @property
    def target(self) -> float:
        return 1.0 - self.alpha


@dataclass(frozen=True)
class HSolution:
    h: float
    dof: int
    bound: float
    x0: np.ndarray | None = None
    v_max: float | None = None
    n_points: int | None = None


class BoundKernel:
    """Tabulated double integral B as a function of c = h / sqrt(V)."""

    def __init__(self, dof: int, order: int, k: int, nodes: int = 64):
        self.dof, self.order, self.k = dof, order, k
        u, w = numerics.clustered_unit_rule(nodes)
        t = numerics.min_order_stat_ppf(u, dof, order)
        keep = (t > 0) & np.isfinite(t) & (w > 0)
        t, w = t[keep], w[keep]
        self.weights = w / w.sum()
        inv = 1.0 / t
        self._scale = 1.0 / np.sqrt(dof * (inv[:, None] + inv[None, :]))

    def __call__(self, c):
        c = np.asarray(c, dtype=float)
        flat = c.reshape(-1)
        out = np.empty(flat.shape)
        # chunk to bound the (chunk, n, n) temporary
        for start in range(0, flat.size, 64):
            cc = flat[start:start + 64]
            inner = numerics.normal_cdf(cc[:, None, None] * self._scale[None]) @ self.weights
            out[start:start + 64] = (inner ** (self.k - 1)) @ self.weights
        return out.reshape(c.shape)[()] if c.ndim == 0 else out.reshape(c.shape)

    def average(self, h: float, v: np.ndarray, weights: np.ndarray, degree: int = 48) -> float:
        """sum_n weights[n] * B(h / sqrt(v[n])).

        Few distinct v are evaluated directly; otherwise B is interpolated by a
        Chebyshev series on the c-range spanned by the nodes.
        """
        c = h / np.sqrt(v)
        lo, hi = float(c.min()), float(c.max())
        if c.size <= 2 * degree or hi - lo < 1e-12 * max(1.0, hi):
            return float(weights @ self(c))
        cheb = np.polynomial.chebyshev
        xs = 0.5 * (hi + lo) + 0.5 * (hi - lo) * cheb.chebpts2(degree + 1)
        series = cheb.Chebyshev.fit(xs, self(xs), degree, domain=[lo, hi])
        return float(weights @ np.clip(series(c), 0.0, 1.0))


@functools.lru_cache(maxsize=64)
def bound_kernel(dof: int, order: int, k: int, nodes: int = 64) -> BoundKernel:
    return BoundKernel(dof, order, k, nodes)


def _kernel(prob: HProblem) -> BoundKernel:
    return bound_kernel(prob.dof, prob.order, prob.k, prob.nodes)


def pcs_bound_given_v(h: float, v: float, prob: HProblem) -> float:
    """Conditional PCS lower bound at a covariate with quadratic form ``v``."""
    if not (h >= 0 and v > 0):
        raise ValueError("need h >= 0 and v > 0")
    return float(_kernel(prob)(h / np.sqrt(v)))


def pcs_bound_adaptive(h: float, v: float, prob: HProblem) -> float:
    """Same bound by nested adaptive quadrature over t and s on [0, inf).

    Much slower than :func:`pcs_bound_given_v`; kept as an independent route.
    """
    nu, order, k = prob.dof, prob.order, prob.k
    spec = prob.quad

    def density(t):
        return float(numerics.min_order_stat_pdf(t, nu, order))

    def inner(t):
        if t <= 0:
            return 0.5
        return numerics.integrate_semi_infinite(
            lambda s: float(numerics.normal_cdf(h / np.sqrt(nu * (1 / t + 1 / s) * v))) * density(s)
            if s > 0 else 0.0, spec)

    return numerics.integrate_semi_infinite(lambda t: inner(t) ** (k - 1) * density(t), spec)


def lhs(prob: HProblem):
    """Left-hand side of the defining equation as a function of h, plus diagnostics."""
    kern = _kernel(prob)
    if prob.form == "minimum":
        x0, vmax = max_quadratic(prob.space, prob.design)
        return (lambda h: float(kern(h / np.sqrt(vmax)))), {"x0": x0, "v_max": vmax}
    pts, wts = covariate_rule(prob.dist, prob.scheme)
    v = quadratic_form(pts, prob.design)
    keep = wts > 0
    v, wts = v[keep], wts[keep]
    return (lambda h: kern.average(h, v, wts)), {"n_points": int(v.size)}


def solve_h_detailed(prob: HProblem, tol: float = 1e-6,
                     bracket: RootBracket = DEFAULT_BRACKET) -> HSolution:
    f, info = lhs(prob)
    g = lambda h: f(h) - prob.target  # noqa: E731
    br = numerics.expand_bracket(g, bracket)
    h = numerics.find_root(g, br, tol=tol)
    return HSolution(h=h, dof=prob.dof, bound=f(h), **info)


def solve_h(prob: HProblem, tol: float = 1e-6) -> float:
    """h such that the PCS lower bound (expectation or worst case over x) equals 1 - alpha."""
    return solve_h_detailed(prob, tol).h
