"""Two-stage fixed-design selection procedures (homoscedastic / heteroscedastic).

Alternatives are indexed 0..k-1 throughout.

Every block of samples is drawn from its own random stream keyed by
(root, alternative, design point, stage), so a run depends only on the root
seed and not on the order in which blocks are produced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .design import DesignMatrix, DimensionMismatchError

STAGE1, STAGE2 = 1, 2


class ProcedureError(RuntimeError):
    pass


class OracleError(ProcedureError):
    pass


class ConfigMismatchError(ProcedureError, ValueError):
    pass


@runtime_checkable
class SimulationOracle(Protocol):
    """Source of noisy observations Y_i(x) = x'beta_i + eps_i(x)."""

    k: int

    def sample(self, i: int, x: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
        ...


def draw(oracle: SimulationOracle, i: int, x: np.ndarray, rng: np.random.Generator) -> float:
    """Single observation of alternative ``i`` at ``x``."""
    return float(oracle.sample(i, x, 1, rng)[0])


@dataclass(frozen=True)
class ProcedureConfig:
    h: float
    delta: float
    n0: int
    alpha: float = 0.05
    form: str = "expectation"
    variance: str | None = None  # "hom"/"het": mode h was solved under, if known

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("indifference-zone parameter delta must be > 0")
        if self.n0 < 2:
            raise ValueError("first-stage size n0 must be >= 2")
        if not self.h > 0:
            raise ValueError("h must be > 0")
        if self.form not in ("expectation", "minimum"):
            raise ValueError(f"unknown pcs form {self.form!r}")


@dataclass(frozen=True, eq=False)
class DecisionRule:
    betas: np.ndarray  # (k, d+1)

    @property
    def k(self) -> int:
        return self.betas.shape[0]

    def scores(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.betas.shape[1]:
            raise DimensionMismatchError(f"expected dimension {self.betas.shape[1]}, got {x.shape[-1]}")
        return x @ self.betas.T

    def select(self, x):
        """Index of the largest estimated mean; np.argmax resolves ties to the smallest index."""
        return np.argmax(self.scores(x), axis=-1)


def select(rule: DecisionRule, x) -> int:
    return int(rule.select(np.asarray(x, dtype=float)))


@dataclass(frozen=True, eq=False)
class BudgetReport:
    sizes: np.ndarray  # (k,) for hom, (k, m) for het
    total: int
    first_stage: int


def substream(root: np.random.SeedSequence | int, *key: int) -> np.random.Generator:
    root = root if isinstance(root, np.random.SeedSequence) else np.random.SeedSequence(root)
    seq = np.random.SeedSequence(root.entropy, spawn_key=(*root.spawn_key, *key))
    return np.random.Generator(np.random.PCG64(seq))


def _block(oracle, i, j, x, size, root, stage) -> np.ndarray:
    if size == 0:
        return np.empty(0)
    y = np.asarray(oracle.sample(i, x, size, substream(root, i, j, stage)), dtype=float)
    if y.shape != (size,):
        raise OracleError(f"oracle returned shape {y.shape} for {size} samples")
    if not np.all(np.isfinite(y)):
        raise OracleError(f"non-finite sample from alternative {i} at design point {j}")
    return y


def pooled_ls_estimate(samples, design: DesignMatrix) -> np.ndarray:
    """(1/n) (X'X)^-1 X' sum_l Y_l for replicate vectors stacked as an (n, m) array."""
    y = np.atleast_2d(np.asarray(samples, dtype=float))
    if y.shape[1] != design.m:
        raise DimensionMismatchError(f"replicates have length {y.shape[1]}, design has m={design.m}")
    return design.hat @ y.mean(axis=0)


def pooled_variance(samples, beta_hat, design: DesignMatrix, n0: int | None = None) -> float:
    """Residual variance with n0*m - d - 1 degrees of freedom."""
    y = np.atleast_2d(np.asarray(samples, dtype=float))
    if y.shape[1] != design.m:
        raise DimensionMismatchError(f"replicates have length {y.shape[1]}, design has m={design.m}")
    n = y.shape[0] if n0 is None else n0
    dof = n * design.m - design.d - 1
    if dof < 1:
        raise ValueError("need n0*m - d - 1 >= 1")
    resid = y - design.rows @ np.asarray(beta_hat, dtype=float)
    return float(np.sum(resid * resid) / dof)


def stage2_size(h: float, s2: float, delta: float, n0: int) -> int:
    """Total sample size max(ceil(h^2 S^2 / delta^2), n0)."""
    return max(int(math.ceil(h * h * s2 / (delta * delta))), n0)


def pointwise_stats(samples) -> tuple[float, float]:
    """Sample mean and unbiased sample variance of one (i, j) cell."""
    y = np.asarray(samples, dtype=float)
    if y.size < 2:
        raise ValueError("need at least 2 samples for a variance estimate")
    return float(y.mean()), float(y.var(ddof=1))


def _check(oracle, design, config, mode):
    if config.variance is not None and config.variance != mode:
        raise ConfigMismatchError(f"h was solved for the {config.variance} procedure, not {mode}")
    if oracle.k < 1:
        raise ConfigMismatchError("oracle must expose k >= 1 alternatives")


def run_fdhom(oracle: SimulationOracle, design: DesignMatrix, config: ProcedureConfig,
              root: np.random.SeedSequence | int) -> tuple[DecisionRule, BudgetReport]:
    """Homoscedastic procedure: one pooled variance per alternative, N_i replicates of the whole design."""
    _check(oracle, design, config, "hom")
    k, m, n0 = oracle.k, design.m, config.n0
    betas = np.empty((k, design.d + 1))
    sizes = np.empty(k, dtype=np.int64)
    for i in range(k):
        first = np.column_stack([_block(oracle, i, j, design.rows[j], n0, root, STAGE1) for j in range(m)])
        beta0 = pooled_ls_estimate(first, design)
        s2 = pooled_variance(first, beta0, design, n0)
        n_i = stage2_size(config.h, s2, config.delta, n0)
        sums = first.sum(axis=0)
        if n_i > n0:
            sums = sums + np.array([_block(oracle, i, j, design.rows[j], n_i - n0, root, STAGE2).sum()
                                    for j in range(m)])
        betas[i] = design.hat @ (sums / n_i)
        sizes[i] = n_i
    report = BudgetReport(sizes=sizes, total=int(m * sizes.sum()), first_stage=k * m * n0)
    return DecisionRule(betas), report


def run_fdhet(oracle: SimulationOracle, design: DesignMatrix, config: ProcedureConfig,
              root: np.random.SeedSequence | int) -> tuple[DecisionRule, BudgetReport]:
    """Heteroscedastic procedure: a variance estimate and sample size for every (i, j) cell."""
    _check(oracle, design, config, "het")
    k, m, n0 = oracle.k, design.m, config.n0
    betas = np.empty((k, design.d + 1))
    sizes = np.empty((k, m), dtype=np.int64)
    for i in range(k):
        means = np.empty(m)
        for j in range(m):
            x = design.rows[j]
            first = _block(oracle, i, j, x, n0, root, STAGE1)
            _, s2 = pointwise_stats(first)
            n_ij = stage2_size(config.h, s2, config.delta, n0)
            extra = _block(oracle, i, j, x, n_ij - n0, root, STAGE2)
            means[j] = (first.sum() + extra.sum()) / n_ij
            sizes[i, j] = n_ij
        betas[i] = design.hat @ means
    report = BudgetReport(sizes=sizes, total=int(sizes.sum()), first_stage=k * m * n0)
    return DecisionRule(betas), report


PROCEDURES = {"fdhom": run_fdhom, "fdhet": run_fdhet}
