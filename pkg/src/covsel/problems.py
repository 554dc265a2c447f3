"""Ground-truth problem instances and their simulation oracles."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize

from .design import (CovariateDistribution, CovariateSpace, DesignMatrix, FinitePmf, Triangular,
                     Uniform, build_design, factorial_design)

PROBLEM3_SEED = 20170929
BENCHMARK_IDS = tuple(range(9))
BENCHMARK_NAMES = ("Benchmark", "k=2", "k=8", "Non-GSC", "IV", "DV", "Het", "d=1", "d=5")


class UnknownProblemError(KeyError):
    pass


# -- noise models ------------------------------------------------------------

@dataclass(frozen=True)
class HomNoise:
    sigmas: tuple[float, ...]

    def __post_init__(self):
        if any(s <= 0 for s in self.sigmas):
            raise ValueError("homoscedastic sigmas must be positive")

    def sd(self, i: int, x, beta: np.ndarray):
        return np.full(np.shape(x)[:-1], self.sigmas[i])


@dataclass(frozen=True)
class LinearHetNoise:
    """sigma_i(x) = scale * x'beta_i."""

    scale: float

    def sd(self, i: int, x, beta: np.ndarray):
        return self.scale * (np.asarray(x) @ beta[i])


@dataclass(frozen=True)
class FunctionNoise:
    func: Callable[[int, np.ndarray], float]

    def sd(self, i: int, x, beta: np.ndarray):
        return np.asarray(self.func(i, np.asarray(x)), dtype=float)


@dataclass(frozen=True, eq=False)
class LinearProblem:
    beta: np.ndarray  # (k, d+1)
    noise: HomNoise | LinearHetNoise | FunctionNoise
    dist: CovariateDistribution
    design: DesignMatrix
    space: CovariateSpace | None = None
    name: str = ""

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        if self.space is None:
            object.__setattr__(self, "space", self.dist.space())
        if beta.ndim != 2 or beta.shape[1] != self.design.d + 1 or self.dist.d != self.design.d:
            raise ValueError("beta, design and covariate distribution dimensions disagree")
        if isinstance(self.noise, HomNoise) and len(self.noise.sigmas) != self.k:
            raise ValueError("need one sigma per alternative")
        if not self.space.contains(self.design.rows):
            raise ValueError("design points must lie in the covariate space")
        if not isinstance(self.noise, HomNoise):
            # sigma linear in x is checked on the hull corners and design points;
            # zero is allowed so the standard heteroscedastic benchmark is admissible
            pts = np.vstack([self.space.corners(), self.design.rows])
            for i in range(self.k):
                if np.any(self.noise.sd(i, pts, beta) < 0):
                    raise ValueError(f"noise sd of alternative {i} is negative somewhere on the space")

    @property
    def k(self) -> int:
        return self.beta.shape[0]

    @property
    def d(self) -> int:
        return self.beta.shape[1] - 1

    @property
    def homoscedastic(self) -> bool:
        return isinstance(self.noise, HomNoise)

    def means(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.beta.T

    def oracle(self) -> "LinearOracle":
        return LinearOracle(self)

    def with_beta(self, beta, name: str | None = None) -> "LinearProblem":
        return dataclasses.replace(self, beta=np.asarray(beta, dtype=float),
                                   name=self.name if name is None else name)


@dataclass(frozen=True)
class LinearOracle:
    problem: LinearProblem
    descriptor: str = "linear model with normal errors"

    @property
    def k(self) -> int:
        return self.problem.k

    def sample(self, i: int, x, size: int, rng: np.random.Generator) -> np.ndarray:
        p = self.problem
        x = np.asarray(x, dtype=float)
        mean = float(x @ p.beta[i])
        sd = float(p.noise.sd(i, x, p.beta))
        return mean + sd * rng.standard_normal(size)


def linear_oracle(problem: LinearProblem) -> LinearOracle:
    return LinearOracle(problem)


def make_gsc(k: int, d: int, delta: float, base_beta) -> np.ndarray:
    """Generalized slippage configuration: alternative 0 is best by exactly delta everywhere."""
    if k < 2 or not delta > 0:
        raise ValueError("need k >= 2 and delta > 0")
    base = np.asarray(base_beta, dtype=float)
    if base.shape != (d + 1,):
        raise ValueError(f"base beta must have length d+1={d + 1}")
    beta = np.tile(base, (k, 1))
    beta[1:, 0] = base[0] - delta
    return beta


def true_best(problem, x, tol: float = 0.0) -> np.ndarray:
    """All alternatives attaining the largest true mean at ``x``."""
    mu = np.asarray(problem.means(np.asarray(x, dtype=float)[None]))[0]
    return np.flatnonzero(mu >= mu.max() - tol)


def benchmark_problem(pid: int) -> LinearProblem:
    """The benchmark (0) and its one-factor variations (1)-(8)."""
    if pid not in BENCHMARK_IDS:
        raise UnknownProblemError(f"unknown benchmark problem id {pid!r}; expected 0..8")
    k, d = 5, 3
    if pid == 1:
        k = 2
    elif pid == 2:
        k = 8
    elif pid == 7:
        d = 1
    elif pid == 8:
        d = 5
    beta = make_gsc(k, d, 1.0, np.ones(d + 1))
    noise = HomNoise((10.0,) * k)
    if pid == 3:
        rng = np.random.default_rng(PROBLEM3_SEED)
        beta = rng.uniform(0.0, 5.0, size=(k, d + 1))
    elif pid == 4:
        noise = HomNoise((5.0, 7.5, 10.0, 12.5, 15.0))
    elif pid == 5:
        noise = HomNoise((15.0, 12.5, 10.0, 7.5, 5.0))
    elif pid == 6:
        noise = LinearHetNoise(10.0)
    return LinearProblem(beta=beta, noise=noise, dist=CovariateDistribution.iid_uniform(d),
                         design=factorial_design([(0.0, 0.5)] * d),
                         space=CovariateSpace.unit_cube(d), name=f"({pid}) {BENCHMARK_NAMES[pid]}")


# -- config serialization ----------------------------------------------------

def marginal_to_dict(marg) -> dict:
    if isinstance(marg, Uniform):
        return {"kind": "uniform", "lo": marg.lo, "hi": marg.hi}
    if isinstance(marg, Triangular):
        return {"kind": "triangular", "lo": marg.lo, "mode": marg.mode, "hi": marg.hi}
    if isinstance(marg, FinitePmf):
        return {"kind": "pmf", "values": list(marg.values), "probs": list(marg.probs)}
    raise TypeError(f"cannot serialize marginal {marg!r}")


def marginal_from_dict(data: dict):
    data = dict(data)
    kind = data.pop("kind", None)
    if kind == "uniform":
        return Uniform(float(data["lo"]), float(data["hi"]))
    if kind == "triangular":
        return Triangular(float(data["lo"]), float(data["mode"]), float(data["hi"]))
    if kind == "pmf":
        return FinitePmf(tuple(data["values"]), tuple(data["probs"]))
    raise ValueError(f"unknown covariate marginal kind {kind!r}")


def problem_to_dict(problem: LinearProblem) -> dict:
    """Plain-data form of a linear problem; design points omit the leading 1."""
    if isinstance(problem.noise, HomNoise):
        noise = {"kind": "hom", "sigmas": list(problem.noise.sigmas)}
    elif isinstance(problem.noise, LinearHetNoise):
        noise = {"kind": "het", "scale": problem.noise.scale}
    else:
        raise TypeError("function-valued noise cannot be serialized")
    return {
        "name": problem.name,
        "beta": problem.beta.tolist(),
        "noise": noise,
        "covariates": [marginal_to_dict(m) for m in problem.dist.marginals],
        "design": problem.design.rows[:, 1:].tolist(),
    }


def problem_from_dict(data: dict) -> LinearProblem:
    unknown = set(data) - {"name", "beta", "noise", "covariates", "design"}
    if unknown:
        raise ValueError(f"unknown problem keys: {sorted(unknown)}")
    noise = dict(data["noise"])
    kind = noise.pop("kind", None)
    if kind == "hom":
        model = HomNoise(tuple(float(s) for s in noise["sigmas"]))
    elif kind == "het":
        model = LinearHetNoise(float(noise["scale"]))
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    dist = CovariateDistribution(tuple(marginal_from_dict(m) for m in data["covariates"]))
    pts = np.atleast_2d(np.asarray(data["design"], dtype=float))
    design = build_design(np.column_stack([np.ones(len(pts)), pts]))
    return LinearProblem(beta=np.asarray(data["beta"], dtype=float), noise=model, dist=dist,
                         design=design, name=data.get("name", ""))


# -- synthetic Markov reward model -------------------------------------------

BE, LGD, HGD, UEAC, DEAC, DEAD = range(6)
STATE_NAMES = ("BE", "LGD", "HGD", "undetected EAC", "detected EAC", "death")
N_STATES = 6
CASE_SUPPORT = ((55.0, 80.0), (0.0, 0.1), (0.0, 1.0), (0.0, 1.0))


@dataclass(frozen=True)
class MarkovRewardModel:
    """Monthly Barrett's-esophagus progression model with three regimens.

    Regimen 0 is surveillance only, 1 adds aspirin (progression x (1 - x3)),
    2 adds statin (progression x (1 - x4)). Covariates are
    (1, start age, annual progression rate, aspirin effect, statin effect).
    All parameter values are synthetic.
    """

    qaly_weights: tuple[float, ...] = (1.0, 0.97, 0.9, 0.75, 0.6, 0.0)
    stage_factors: tuple[float, float, float] = (3.0, 3.0, 3.0)  # BE->LGD, LGD->HGD, HGD->uEAC
    hgd_treated: float = 1.0 / 24.0  # HGD ablated back to BE under surveillance
    eac_detect: float = 1.0 / 12.0
    eac_death: tuple[float, float] = (0.03, 0.012)  # monthly, undetected / detected
    drug_mortality: tuple[float, float, float] = (0.0, 3.0e-4, 2.0e-4)  # extra monthly death
    drug_utility: tuple[float, float, float] = (1.0, 0.96, 0.97)  # QALY multiplier on drug
    gompertz: tuple[float, float] = (3.0e-5, 0.095)  # annual hazard a * exp(b * age)
    max_age: float = 110.0
    drug_effect_scale: float = 1.0  # 0 switches the chemoprevention effects off


    def __post_init__(self):
        if len(self.qaly_weights) != N_STATES or not all(0 <= w <= 1 for w in self.qaly_weights):
            raise ValueError("need 6 QALY weights in [0, 1]")
        if self.qaly_weights[DEAD] != 0:
            raise ValueError("death must carry zero QALY weight")
        if not 0 <= self.drug_effect_scale <= 1:
            raise ValueError("drug_effect_scale must lie in [0, 1]")

    @property
    def k(self) -> int:
        return 3

    def monthly_progression(self, x, regimen: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        base = -np.expm1(np.log1p(-x[..., 2]) / 12.0)
        effect = 0.0 if regimen == 0 else self.drug_effect_scale * x[..., 2 + regimen]
        return base * (1.0 - effect)

    def background_death(self, age) -> np.ndarray:
        a, b = self.gompertz
        age = np.asarray(age, dtype=float)
        q = -np.expm1(-a * np.exp(b * age) / 12.0)
        return np.where(age >= self.max_age, 1.0, q)

    def kernels(self, regimen: int, x, age) -> np.ndarray:
        """Transition matrices for one month; broadcast over leading axes of x/age."""
        p = self.monthly_progression(x, regimen)
        qd = self.background_death(age)
        p, qd = np.broadcast_arrays(p, qd)
        shape = p.shape
        alive = (1.0 - qd) * (1.0 - self.drug_mortality[regimen])
        K = np.zeros(shape + (N_STATES, N_STATES))
        f = self.stage_factors
        for s, nxt in ((BE, LGD), (LGD, HGD)):
            move = np.minimum(f[s] * p, 1.0)
            K[..., s, nxt] = alive * move
            K[..., s, s] = alive * (1.0 - move)
        move = np.minimum(f[2] * p, 1.0 - self.hgd_treated)
        K[..., HGD, UEAC] = alive * move
        K[..., HGD, BE] = alive * self.hgd_treated
        K[..., HGD, HGD] = alive * (1.0 - move - self.hgd_treated)
        for s, cd in ((UEAC, self.eac_death[0]), (DEAC, self.eac_death[1])):
            surv = alive * (1.0 - cd)
            if s == UEAC:
                K[..., s, DEAC] = surv * self.eac_detect
                K[..., s, s] = surv * (1.0 - self.eac_detect)
            else:
                K[..., s, s] = surv
        K[..., DEAD, DEAD] = 1.0
        K[..., :DEAD, DEAD] = 1.0 - K[..., :DEAD, :DEAD].sum(axis=-1)
        return K

    def horizon(self, start_age) -> int:
        return int(np.ceil((self.max_age - np.min(start_age)) * 12.0)) + 1

    def state_rewards(self, regimen: int) -> np.ndarray:
        return np.asarray(self.qaly_weights) * self.drug_utility[regimen] / 12.0

    def expected_qalys(self, regimen: int, xs) -> np.ndarray:
        """Exact expected QALYs by propagating the state distribution month by month.

        Uses the sparsity of the kernel directly; agrees with repeated
        multiplication by :meth:`kernels` to rounding error.
        """
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        p = self.monthly_progression(xs, regimen)
        f = self.stage_factors
        m0, m1 = np.minimum(f[0] * p, 1.0), np.minimum(f[1] * p, 1.0)
        m2 = np.minimum(f[2] * p, 1.0 - self.hgd_treated)
        ht, det = self.hgd_treated, self.eac_detect
        su, sd = 1.0 - self.eac_death[0], 1.0 - self.eac_death[1]
        r = self.state_rewards(regimen)
        n = len(xs)
        be, lgd, hgd, ue, de = np.ones(n), np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n)
        total = np.zeros(n)
        for t in range(self.horizon(xs[:, 1])):
            alive = (1.0 - self.background_death(xs[:, 1] + t / 12.0)) * (1.0 - self.drug_mortality[regimen])
            be, lgd, hgd, ue, de = (
                alive * (be * (1.0 - m0) + hgd * ht),
                alive * (be * m0 + lgd * (1.0 - m1)),
                alive * (lgd * m1 + hgd * (1.0 - m2 - ht)),
                alive * (hgd * m2 + ue * su * (1.0 - det)),
                alive * (ue * su * det + de * sd),
            )
            total += r[BE] * be + r[LGD] * lgd + r[HGD] * hgd + r[UEAC] * ue + r[DEAC] * de
            if (be + lgd + hgd + ue + de).max() <= 1e-15:
                break
        return total

    def cohort_qalys(self, regimen: int, xs) -> np.ndarray:
        """Reference propagation with the dense kernels (slow)."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        pi = np.zeros((len(xs), N_STATES))
        pi[:, BE] = 1.0
        reward = self.state_rewards(regimen)
        total = np.zeros(len(xs))
        for t in range(self.horizon(xs[:, 1])):
            age = xs[:, 1] + t / 12.0
            pi = np.einsum("ns,nst->nt", pi, self.kernels(regimen, xs, age))
            total += pi @ reward
            if pi[:, DEAD].min() >= 1.0 - 1e-15:
                break
        return total

    def simulate(self, regimen: int, x, size: int, rng: np.random.Generator) -> np.ndarray:
        """QALYs of ``size`` independent patients sharing covariate ``x``."""
        x = np.asarray(x, dtype=float)
        check_case_covariate(x)
        reward = self.state_rewards(regimen)
        horizon = self.horizon(x[1])
        cum = np.cumsum(self.kernels(regimen, x, x[1] + np.arange(horizon) / 12.0), axis=-1)
        cum[..., -1] = 1.0
        state = np.full(size, BE)
        total = np.zeros(size)
        active = np.arange(size)
        for t in range(horizon):
            if active.size == 0:
                break
            u = rng.random(active.size)
            nxt = (u[:, None] >= cum[t, state[active]]).sum(axis=1)
            state[active] = nxt
            total[active] += reward[nxt]
            active = active[nxt != DEAD]
        return total

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "MarkovRewardModel":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown Markov model parameters: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


def check_case_covariate(x):
    x = np.asarray(x, dtype=float)
    if x.shape != (5,) or x[0] != 1.0:
        raise ValueError("case-study covariate must be (1, age, rate, aspirin, statin)")
    for v, (lo, hi) in zip(x[1:], CASE_SUPPORT):
        if not lo <= v <= hi:
            raise ValueError(f"covariate {x.tolist()} outside the case-study support")


def simulate_patient(model: MarkovRewardModel, regimen: int, x, rng: np.random.Generator) -> float:
    return float(model.simulate(regimen, x, 1, rng)[0])


@dataclass(frozen=True)
class MarkovOracle:
    model: MarkovRewardModel
    descriptor: str = "synthetic Barrett's esophagus Markov model (QALYs)"

    @property
    def k(self) -> int:
        return self.model.k

    def sample(self, i: int, x, size: int, rng: np.random.Generator) -> np.ndarray:
        return self.model.simulate(i, x, size, rng)


def age_pmf(mean: float = 64.78, lo: int = 55, hi: int = 80) -> FinitePmf:
    """Truncated geometric-shaped pmf on lo..hi with the requested mean."""
    ages = np.arange(lo, hi + 1, dtype=float)

    def pmf(rate):
        w = np.exp(-rate * (ages - lo))
        return w / w.sum()

    rate = optimize.brentq(lambda r: pmf(r) @ ages - mean, 1e-6, 5.0, xtol=1e-14)
    p = pmf(rate)
    p[-1] = 1.0 - p[:-1].sum()
    return FinitePmf(tuple(ages), tuple(p))


@dataclass(frozen=True, eq=False)
class CaseStudy:
    model: MarkovRewardModel
    dist: CovariateDistribution
    design: DesignMatrix
    space: CovariateSpace
    name: str = "case study"

    @property
    def k(self) -> int:
        return self.model.k

    def oracle(self) -> MarkovOracle:
        return MarkovOracle(self.model)

    def means(self, xs) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        return np.column_stack([self.model.expected_qalys(i, xs) for i in range(self.k)])


def case_study_problem(model: MarkovRewardModel | None = None) -> CaseStudy:
    """Three regimens, four covariates, 2^4 design points."""
    dist = CovariateDistribution((age_pmf(), Uniform(0.0, 0.1), Triangular(0.0, 0.59, 1.0),
                                  Triangular(0.0, 0.62, 1.0)))
    design = factorial_design([(60.0, 70.0), (0.1 / 3, 0.2 / 3), (1 / 3, 2 / 3), (1 / 3, 2 / 3)])
    return CaseStudy(model or MarkovRewardModel(), dist, design, dist.space())
