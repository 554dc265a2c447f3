"""Design matrices, covariate spaces/distributions and expectations over covariates.

Covariate vectors are always *augmented*: a leading 1 followed by the d
covariate values.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
from scipy.stats import qmc

from .numerics import gauss_legendre_unit

COND_LIMIT = 1e12


class DesignError(ValueError):
    pass


class SingularDesignError(DesignError):
    pass


class DimensionMismatchError(DesignError):
    pass


class UnboundedDomainError(DesignError):
    pass


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Fixed design with its cached Gram inverse. Build with :func:`build_design`."""

    rows: np.ndarray
    gram_inv: np.ndarray

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1] - 1

    @property
    def hat(self) -> np.ndarray:
        """(X'X)^-1 X', the map from per-point means to coefficients."""
        return self.gram_inv @ self.rows.T

    def __eq__(self, other):
        return isinstance(other, DesignMatrix) and np.array_equal(self.rows, other.rows)

    def __hash__(self):
        return hash(self.rows.tobytes())


def build_design(points) -> DesignMatrix:
    rows = np.array(points, dtype=float)
    if rows.ndim != 2:
        raise DimensionMismatchError("design points must form a 2-d array")
    m, p = rows.shape
    if p < 1 or not np.all(rows[:, 0] == 1.0):
        raise DesignError("every design point must be augmented with a leading 1")
    if m < p:
        raise SingularDesignError(f"need m >= d+1 design points, got m={m}, d={p - 1}")
    gram = rows.T @ rows
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularDesignError(f"X'X is singular or ill-conditioned (cond={cond:.3g})")
    gram_inv = np.linalg.inv(gram)
    rows.setflags(write=False)
    gram_inv.setflags(write=False)
    return DesignMatrix(rows, gram_inv)


def quadratic_form(x, design: DesignMatrix):
    """V(x) = x' (X'X)^-1 x; ``x`` may be a single point or an (n, d+1) stack."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != design.d + 1:
        raise DimensionMismatchError(f"expected dimension {design.d + 1}, got {x.shape[-1]}")
    return np.einsum("...i,ij,...j->...", x, design.gram_inv, x)


# -- covariate spaces -------------------------------------------------------

@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"interval needs lo <= hi, got [{self.lo}, {self.hi}]")

    @property
    def extremes(self) -> tuple[float, ...]:
        return (self.lo,) if self.lo == self.hi else (self.lo, self.hi)

    def contains(self, v) -> np.ndarray:
        return (np.asarray(v) >= self.lo) & (np.asarray(v) <= self.hi)


@dataclass(frozen=True)
class FiniteSet:
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValueError("finite covariate set must be nonempty")
        object.__setattr__(self, "values", tuple(sorted(float(v) for v in self.values)))

    @property
    def extremes(self) -> tuple[float, ...]:
        # Only the hull's extreme points matter for maximizing a convex form.
        lo, hi = self.values[0], self.values[-1]
        return (lo,) if lo == hi else (lo, hi)

    @property
    def lo(self) -> float:
        return self.values[0]

    @property
    def hi(self) -> float:
        return self.values[-1]

    def contains(self, v) -> np.ndarray:
        return np.isin(np.asarray(v, dtype=float), self.values)


Dimension = Union[Interval, FiniteSet]


@dataclass(frozen=True)
class CovariateSpace:
    dimensions: tuple[Dimension, ...]

    @property
    def d(self) -> int:
        return len(self.dimensions)

    @classmethod
    def unit_cube(cls, d: int) -> "CovariateSpace":
        return cls(tuple(Interval(0.0, 1.0) for _ in range(d)))

    def corners(self) -> np.ndarray:
        """Augmented extreme points of the convex hull, in lexicographic order."""
        for dim in self.dimensions:
            if isinstance(dim, Interval) and not (np.isfinite(dim.lo) and np.isfinite(dim.hi)):
                raise UnboundedDomainError("covariate space must be bounded")
        combos = itertools.product(*(dim.extremes for dim in self.dimensions))
        return np.array([(1.0, *c) for c in combos], dtype=float).reshape(-1, self.d + 1)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d + 1 or not np.all(x[..., 0] == 1.0):
            return False
        return bool(all(np.all(dim.contains(x[..., l + 1])) for l, dim in enumerate(self.dimensions)))


def max_quadratic(space: CovariateSpace, design: DesignMatrix) -> tuple[np.ndarray, float]:
    """Maximize V(x) over the space by enumerating its 2^d hull corners.

    V is convex (the Gram inverse is positive definite), so the maximum over a
    bounded closed set is attained at an extreme point of its convex hull. Ties
    go to the lexicographically smallest corner.
    """
    if space.d != design.d:
        raise DimensionMismatchError(f"space has d={space.d}, design has d={design.d}")
    corners = space.corners()
    values = quadratic_form(corners, design)
    vmax = values.max()
    # corners are generated in lexicographic order, so the first hit is the smallest
    best = int(np.flatnonzero(values >= vmax - 1e-12 * max(1.0, abs(vmax)))[0])
    return corners[best].copy(), float(values[best])


# -- covariate distributions -------------------------------------------------

@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("uniform needs lo < hi")

    @property
    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def support(self) -> Interval:
        return Interval(self.lo, self.hi)

    def ppf(self, u):
        return self.lo + (self.hi - self.lo) * np.asarray(u)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.uniform(self.lo, self.hi, size)

    def rule(self, n: int):
        z, w = gauss_legendre_unit(n)
        return self.ppf(z), w


@dataclass(frozen=True)
class Triangular:
    lo: float
    mode: float
    hi: float

    def __post_init__(self):
        if not (self.lo <= self.mode <= self.hi and self.lo < self.hi):
            raise ValueError("triangular needs lo <= mode <= hi and lo < hi")

    @property
    def mean(self) -> float:
        return (self.lo + self.mode + self.hi) / 3.0

    @property
    def support(self) -> Interval:
        return Interval(self.lo, self.hi)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        a, c, b = self.lo, self.mode, self.hi
        fc = (c - a) / (b - a)
        left = a + np.sqrt(u * (b - a) * (c - a))
        right = b - np.sqrt((1.0 - u) * (b - a) * (b - c))
        return np.where(u < fc, left, right)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.triangular(self.lo, self.mode, self.hi, size)

    def rule(self, n: int):
        # Gauss-Legendre on each linear piece of the density: exact for
        # polynomials of degree 2n-2 in x.
        a, c, b = self.lo, self.mode, self.hi
        z, w = gauss_legendre_unit(n)
        xs, ws = [], []
        if c > a:
            x = a + (c - a) * z
            xs.append(x)
            ws.append(w * (c - a) * 2.0 * (x - a) / ((b - a) * (c - a)))
        if b > c:
            x = c + (b - c) * z
            xs.append(x)
            ws.append(w * (b - c) * 2.0 * (b - x) / ((b - a) * (b - c)))
        return np.concatenate(xs), np.concatenate(ws)


@dataclass(frozen=True)
class FinitePmf:
    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) == 0 or len(self.values) != len(self.probs):
            raise ValueError("pmf needs matching, nonempty values and probs")
        if any(p < 0 for p in self.probs) or abs(sum(self.probs) - 1.0) > 1e-12:
            raise ValueError("pmf probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    @property
    def support(self) -> FiniteSet:
        return FiniteSet(self.values)

    def ppf(self, u):
        cdf = np.cumsum(self.probs)
        idx = np.searchsorted(cdf, np.asarray(u), side="right")
        return np.asarray(self.values)[np.minimum(idx, len(self.values) - 1)]

    def sample(self, rng: np.random.Generator, size=None):
        return rng.choice(np.asarray(self.values), size=size, p=np.asarray(self.probs))

    def rule(self, n: int):
        return np.asarray(self.values), np.asarray(self.probs)


Marginal = Union[Uniform, Triangular, FinitePmf]


@dataclass(frozen=True)
class CovariateDistribution:
    """Independent marginals for X_1..X_d."""

    marginals: tuple[Marginal, ...]

    @property
    def d(self) -> int:
        return len(self.marginals)

    @classmethod
    def iid_uniform(cls, d: int, lo: float = 0.0, hi: float = 1.0) -> "CovariateDistribution":
        return cls(tuple(Uniform(lo, hi) for _ in range(d)))

    @property
    def mean(self) -> np.ndarray:
        return np.array([1.0, *(mg.mean for mg in self.marginals)])

    def space(self) -> CovariateSpace:
        return CovariateSpace(tuple(mg.support for mg in self.marginals))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        out = np.empty((size, self.d + 1))
        out[:, 0] = 1.0
        for l, mg in enumerate(self.marginals):
            out[:, l + 1] = mg.sample(rng, size)
        return out


def sample_covariate(dist: CovariateDistribution, rng: np.random.Generator) -> np.ndarray:
    return dist.sample(rng, 1)[0]


@dataclass(frozen=True)
class ExpectationScheme:
    kind: str = "auto"  # tensor | qmc | mc | auto
    nodes: int = 0  # per-dimension nodes (tensor) or point count (qmc/mc); 0 = default
    seed: int | None = 12345

    KINDS = ("tensor", "qmc", "mc", "auto")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown expectation scheme {self.kind!r}")
        if self.nodes < 0:
            raise ValueError("nodes must be >= 1 (or 0 for the default)")

    def resolve(self, d: int) -> "ExpectationScheme":
        kind = self.kind
        if kind == "auto":
            kind = "tensor" if d <= 4 else "qmc"
        nodes = self.nodes or {"tensor": 12, "qmc": 2 ** 16, "mc": 2 ** 16}[kind]
        return ExpectationScheme(kind, nodes, self.seed)


def covariate_rule(dist: CovariateDistribution, scheme: ExpectationScheme | None = None):
    """Nodes (augmented, shape (n, d+1)) and weights summing to 1 for E over X."""
    scheme = (scheme or ExpectationScheme()).resolve(dist.d)
    d = dist.d
    if d == 0:
        return np.ones((1, 1)), np.ones(1)
    if scheme.kind == "tensor":
        rules = [mg.rule(scheme.nodes) for mg in dist.marginals]
        pts = np.array(list(itertools.product(*(r[0] for r in rules))))
        wts = np.prod(np.array(list(itertools.product(*(r[1] for r in rules)))), axis=1)
    elif scheme.kind == "qmc":
        sob = qmc.Sobol(d, scramble=True, seed=scheme.seed)
        m = int(np.ceil(np.log2(scheme.nodes)))
        u = sob.random_base2(m)
        pts = np.column_stack([mg.ppf(u[:, l]) for l, mg in enumerate(dist.marginals)])
        wts = np.full(len(pts), 1.0 / len(pts))
    else:
        rng = np.random.default_rng(scheme.seed)
        pts = dist.sample(rng, scheme.nodes)[:, 1:]
        wts = np.full(len(pts), 1.0 / len(pts))
    aug = np.column_stack([np.ones(len(pts)), pts])
    return aug, wts / wts.sum()


def expect_over_covariates(f: Callable[[np.ndarray], float], dist: CovariateDistribution,
                           scheme: ExpectationScheme | None = None, vectorized: bool = False):
    """E[f(X)] for augmented X; ``vectorized`` means f takes an (n, d+1) stack.

    Vector-valued f (one row of outputs per point) gives an array of expectations.
    """
    pts, wts = covariate_rule(dist, scheme)
    if vectorized:
        vals = np.asarray(f(pts), dtype=float)
    else:
        vals = np.array([f(x) for x in pts], dtype=float)
    out = wts @ vals
    return float(out) if np.ndim(out) == 0 else out


def factorial_design(levels: Sequence[Sequence[float]]) -> DesignMatrix:
    """Full factorial design over per-dimension level sets."""
    return build_design([(1.0, *c) for c in itertools.product(*levels)])
