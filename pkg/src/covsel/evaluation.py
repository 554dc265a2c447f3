"""Monte Carlo evaluation of achieved PCS over macro-replications."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .design import max_quadratic
from .procedures import PROCEDURES, DecisionRule, ProcedureConfig, substream

TEST_STREAM = 1_000_003  # substream key for test covariates, distinct from (i, j, stage) keys


def selection_gaps(problem, mu: np.ndarray, xs: np.ndarray, sel: np.ndarray) -> np.ndarray:
    """Best true mean minus the true mean of the choice; ``sel`` is (n,) or (n, c).

    For linear problems the gap is formed as x'(beta_best - beta_sel), so a
    configuration built with a gap of exactly delta yields exactly delta.
    """
    best = mu.argmax(axis=1)
    beta = getattr(problem, "beta", None)
    if beta is not None:
        diff = beta[best][:, None, :] - beta[sel.reshape(len(xs), -1)]
        gaps = np.einsum("nj,ncj->nc", xs, diff)
    else:
        gaps = mu.max(axis=1)[:, None] - np.take_along_axis(mu, sel.reshape(len(xs), -1), axis=1)
    return gaps.reshape(sel.shape)


def good_selection(problem, rule: DecisionRule, xs: np.ndarray, delta: float) -> np.ndarray:
    """Indicator that the selected alternative is within delta (strictly) of the best."""
    mu = np.asarray(problem.means(xs))
    return selection_gaps(problem, mu, xs, np.asarray(rule.select(xs))) < delta


def estimate_pcs_e(rules, problem, T: int, rng: np.random.Generator, delta: float) -> float:
    """Average over rules of the good-selection rate on T fresh covariates per rule."""
    rates = [good_selection(problem, rule, problem.dist.sample(rng, T), delta).mean() for rule in rules]
    return float(np.mean(rates))


def estimate_pcs_min(rules, problem, x0, delta: float) -> float:
    x0 = np.asarray(x0, dtype=float)[None]
    return float(np.mean([good_selection(problem, rule, x0, delta)[0] for rule in rules]))


@dataclass(frozen=True, eq=False)
class ExperimentPlan:
    problem: object
    procedure: str
    config: ProcedureConfig
    R: int = 200
    T: int = 10_000
    seed: int = 0
    x0: np.ndarray | None = None

    def __post_init__(self):
        if self.procedure not in PROCEDURES:
            raise ValueError(f"procedure must be one of {sorted(PROCEDURES)}")
        if self.R < 1 or self.T < 1:
            raise ValueError("need R >= 1 and T >= 1")
        if self.x0 is None:
            x0, _ = max_quadratic(self.problem.space, self.problem.design)
            object.__setattr__(self, "x0", x0)


@dataclass(frozen=True)
class ReplicationRecord:
    rep: int
    total: int
    pcs_e: float  # good-selection rate of the rule on this replication's test set
    good_at_x0: bool
    value: float  # mean true performance of the rule's choices on the test set
    best_value: float  # mean of max_i over the test set
    alt_values: tuple[float, ...]  # mean true performance of each constant choice
    alt_good: tuple[float, ...]  # good-selection rate of each constant choice


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    h: float
    mean_total: float
    pcs_e: float
    pcs_min: float
    x0: np.ndarray
    records: list[ReplicationRecord] = field(repr=False)

    @property
    def R(self) -> int:
        return len(self.records)

    @property
    def se_pcs_e(self) -> float:
        vals = np.array([r.pcs_e for r in self.records])
        return float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else float("nan")

    @property
    def se_pcs_min(self) -> float:
        p = self.pcs_min
        return math.sqrt(p * (1 - p) / self.R)


def replicate(plan: ExperimentPlan, rep: int) -> ReplicationRecord:
    root = np.random.SeedSequence(plan.seed, spawn_key=(rep,))
    run = PROCEDURES[plan.procedure]
    rule, budget = run(plan.problem.oracle(), plan.problem.design, plan.config, root)
    xs = plan.problem.dist.sample(substream(root, TEST_STREAM), plan.T)
    delta = plan.config.delta
    mu = np.asarray(plan.problem.means(xs))
    sel = rule.select(xs)
    gap = selection_gaps(plan.problem, mu, xs, sel)
    alt_gap = selection_gaps(plan.problem, mu, xs, np.tile(np.arange(mu.shape[1]), (len(xs), 1)))
    chosen = mu[np.arange(len(xs)), sel]
    best = mu.max(axis=1)
    at_x0 = bool(good_selection(plan.problem, rule, plan.x0[None], delta)[0])
    return ReplicationRecord(
        rep=rep, total=budget.total, pcs_e=float(np.mean(gap < delta)), good_at_x0=at_x0,
        value=float(chosen.mean()), best_value=float(best.mean()),
        alt_values=tuple(mu.mean(axis=0).tolist()),
        alt_good=tuple(np.mean(alt_gap < delta, axis=0).tolist()),
    )


def _replicate_chunk(args):
    plan, reps = args
    return [replicate(plan, r) for r in reps]


def run_experiment(plan: ExperimentPlan, workers: int = 1) -> ExperimentReport:
    """R macro-replications; results do not depend on ``workers``."""
    reps = list(range(plan.R))
    if workers <= 1 or plan.R == 1:
        records = [replicate(plan, r) for r in reps]
    else:
        chunks = [reps[c::workers] for c in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            records = [rec for out in pool.map(_replicate_chunk, [(plan, c) for c in chunks]) for rec in out]
        records.sort(key=lambda rec: rec.rep)
    return ExperimentReport(
        h=plan.config.h,
        mean_total=float(np.mean([r.total for r in records])),
        pcs_e=float(np.mean([r.pcs_e for r in records])),
        pcs_min=float(np.mean([r.good_at_x0 for r in records])),
        x0=np.asarray(plan.x0),
        records=records,
    )


# -- least-favorable-configuration stress test --------------------------------

def perturb_gsc(beta: np.ndarray, space, delta: float, rng: np.random.Generator,
                max_extra: float = 2.0) -> np.ndarray:
    """Random configuration whose inferior alternatives trail the best by >= delta everywhere.

    Each inferior intercept is lowered by an extra U(0, max_extra*delta); its slopes
    are lowered by a random tilt, scaled so that on the space the tilt never gives
    back more than that extra margin (the gap changes by x'tilt, linear in x, so
    checking the hull corners suffices).
    """
    out = np.array(beta, dtype=float)
    corners = space.corners()[:, 1:]
    for i in range(1, out.shape[0]):
        extra = rng.uniform(0.0, max_extra * delta)
        tilt = rng.uniform(-1.0, 1.0, size=out.shape[1] - 1)
        worst = -float((corners @ tilt).min())
        if worst > extra:
            tilt *= extra / worst
        out[i, 0] -= extra
        out[i, 1:] -= tilt
    return out


@dataclass(frozen=True)
class LFCComparison:
    label: str
    pcs_gsc: float
    pcs_other: float
    diff: float  # GSC minus other
    se: float  # paired standard error of diff


def paired_comparison(gsc_report: ExperimentReport, other: ExperimentReport, label: str) -> LFCComparison:
    a = np.array([r.pcs_e for r in gsc_report.records])
    b = np.array([r.pcs_e for r in other.records])
    diff = a - b
    se = float(diff.std(ddof=1) / math.sqrt(len(diff))) if len(diff) > 1 else float("nan")
    return LFCComparison(label, float(a.mean()), float(b.mean()), float(diff.mean()), se)


def lfc_stress_test(problem, procedure: str, config: ProcedureConfig, n_configs: int = 5,
                    R: int = 200, T: int = 10_000, seed: int = 0, workers: int = 1,
                    others=()) -> list[LFCComparison]:
    """Compare PCS_E under the GSC ``problem`` with perturbed configurations.

    All arms share the master seed, so each replication sees identical noise and
    test covariates; the sample sizes do not depend on the means, which makes
    the per-replication differences a paired estimator. ``others`` may add
    extra (label, beta) configurations.
    """
    base = run_experiment(ExperimentPlan(problem, procedure, config, R, T, seed), workers)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(TEST_STREAM + 1,)))
    arms = [(f"perturbation {c + 1}", perturb_gsc(problem.beta, problem.space, config.delta, rng))
            for c in range(n_configs)]
    arms += list(others)
    out = []
    for label, beta in arms:
        rep = run_experiment(ExperimentPlan(problem.with_beta(beta), procedure, config, R, T, seed), workers)
        out.append(paired_comparison(base, rep, label))
    return out


# -- output ------------------------------------------------------------------

COLUMNS = ("Problem", "Procedure", "h", "Sample", "PCS_E-hat", "PCS_min-hat")


def report_row(name: str, procedure: str, report: ExperimentReport) -> dict:
    return {
        "Problem": name,
        "Procedure": procedure,
        "h": f"{report.h:.3f}",
        "Sample": f"{report.mean_total:.0f}",
        "PCS_E-hat": f"{report.pcs_e:.4f}",
        "PCS_min-hat": f"{report.pcs_min:.4f}",
    }


def to_csv(rows: list[dict], columns=None) -> str:
    columns = list(columns or rows[0].keys())
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def format_table(rows: list[dict], columns=None) -> str:
    columns = list(columns or rows[0].keys())
    widths = [max(len(c), *(len(str(r[c])) for r in rows)) for c in columns]
    lines = ["  ".join(c.ljust(w) if n == 0 else c.rjust(w) for n, (c, w) in enumerate(zip(columns, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(str(r[c]).ljust(w) if n == 0 else str(r[c]).rjust(w)
                               for n, (c, w) in enumerate(zip(columns, widths))))
    return "\n".join(lines) + "\n"
