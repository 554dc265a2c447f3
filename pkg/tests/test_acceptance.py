"""Acceptance criteria, one test each; every test records a PASS/FAIL line.

Run directly (``python3 tests/test_acceptance.py``) or through pytest, which
prints the collected lines in the terminal summary.
"""

import math
import sys
import time

import numpy as np
from scipy import stats

from covsel.constants import HProblem, pcs_bound_given_v, solve_h
from covsel.design import (CovariateDistribution, CovariateSpace, SingularDesignError, build_design,
                           factorial_design, max_quadratic, quadratic_form)
from covsel.evaluation import ExperimentPlan, lfc_stress_test, run_experiment
from covsel.problems import MarkovRewardModel, benchmark_problem, case_study_problem
from covsel.procedures import ProcedureConfig, run_fdhet, run_fdhom
from covsel import cli

RESULTS = []


def record(n, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def h_problem(variance, form, k=5, d=3, n0=50):
    return HProblem(variance, form, k, n0, factorial_design([(0.0, 0.5)] * d),
                    dist=CovariateDistribution.iid_uniform(d), space=CovariateSpace.unit_cube(d))


_H = {}


def h_of(variance, form, k=5, d=3):
    key = (variance, form, k, d)
    if key not in _H:
        _H[key] = solve_h(h_problem(variance, form, k, d))
    return _H[key]


def fd_config(variance, form="expectation"):
    return ProcedureConfig(h=h_of(variance, form), delta=1.0, n0=50, form=form, variance=variance)


# (label, variance, form, k, d, reference)
H_TARGETS = [
    ("benchmark Hom", "hom", "expectation", 5, 3, 3.423), ("benchmark Het", "het", "expectation", 5, 3, 4.034),
    ("k=2 Hom", "hom", "expectation", 2, 3, 2.363), ("k=2 Het", "het", "expectation", 2, 3, 2.781),
    ("k=8 Hom", "hom", "expectation", 8, 3, 3.822), ("k=8 Het", "het", "expectation", 8, 3, 4.510),
    ("d=1 Hom", "hom", "expectation", 5, 1, 4.612), ("d=1 Het", "het", "expectation", 5, 1, 4.924),
    ("d=5 Hom", "hom", "expectation", 5, 5, 2.141), ("d=5 Het", "het", "expectation", 5, 5, 2.710),
    ("min-form Hom", "hom", "minimum", 5, 3, 5.927), ("min-form Het", "het", "minimum", 5, 3, 6.990),
]


def test_criterion_01_h_constants():
    start = time.perf_counter()
    misses = []
    for label, variance, form, k, d, reference in H_TARGETS:
        h = solve_h(h_problem(variance, form, k, d))
        _H[(variance, form, k, d)] = h
        if abs(h - reference) > 0.01:
            misses.append(f"{label} {h:.3f} vs {reference:.3f}")
    elapsed = time.perf_counter() - start
    ok = not misses and elapsed < 60
    detail = f"{len(H_TARGETS) - len(misses)}/{len(H_TARGETS)} within 0.01, {elapsed:.1f}s"
    record(1, ok, detail + ("; off: " + ", ".join(misses) if misses else ""))


def test_criterion_02_sample_budget():
    p = benchmark_problem(0)
    hom = run_experiment(ExperimentPlan(p, "fdhom", fd_config("hom"), R=100, T=1, seed=2))
    het = run_experiment(ExperimentPlan(p, "fdhet", fd_config("het"), R=100, T=1, seed=2))
    dev_hom = hom.mean_total / 46865 - 1
    dev_het = het.mean_total / 65138 - 1
    ok = abs(dev_hom) <= 0.03 and abs(dev_het) <= 0.03
    record(2, ok, f"FDHom {hom.mean_total:.0f} ({dev_hom:+.2%}), FDHet {het.mean_total:.0f} ({dev_het:+.2%})")


def test_criterion_03_pcs_e_desk_scale():
    rep = run_experiment(ExperimentPlan(benchmark_problem(0), "fdhom", fd_config("hom"), R=200, T=10_000, seed=3))
    record(3, 0.946 <= rep.pcs_e <= 0.976, f"benchmark FDHom PCS_E-hat {rep.pcs_e:.4f} (se {rep.se_pcs_e:.4f})")


def test_criterion_04_heteroscedastic_failure_direction():
    p6 = benchmark_problem(6)
    hom = run_experiment(ExperimentPlan(p6, "fdhom", fd_config("hom"), R=200, T=10_000, seed=4))
    het = run_experiment(ExperimentPlan(p6, "fdhet", fd_config("het"), R=200, T=10_000, seed=4))
    ok = hom.pcs_e < 0.95 <= het.pcs_e
    record(4, ok, f"Problem (6) FDHom {hom.pcs_e:.4f} < 0.95, FDHet {het.pcs_e:.4f} >= 0.95")


def test_criterion_05_pcs_min_desk_scale():
    plan = ExperimentPlan(benchmark_problem(0), "fdhom", fd_config("hom", "minimum"), R=1000, T=100, seed=5)
    rep = run_experiment(plan)
    record(5, 0.935 <= rep.pcs_min <= 0.985, f"benchmark FDHom, min-form h, PCS_min-hat {rep.pcs_min:.4f}")


def test_criterion_06_orderings():
    failures = []
    for k, d in [(5, 3), (2, 3), (8, 3), (5, 1), (5, 5)]:
        h = {(v, f): h_of(v, f, k, d) for v in ("hom", "het") for f in ("expectation", "minimum")}
        for f in ("expectation", "minimum"):
            if h["het", f] < h["hom", f]:
                failures.append(f"het<hom k={k} d={d} {f}")
        for v in ("hom", "het"):
            if h[v, "minimum"] < h[v, "expectation"]:
                failures.append(f"min<E k={k} d={d} {v}")
    grid_h = np.linspace(0.5, 10, 20)
    grid_v = np.linspace(0.05, 5, 20)
    for v in ("hom", "het"):
        prob = h_problem(v, "minimum")
        in_h = [pcs_bound_given_v(h, 1.0, prob) for h in grid_h]
        in_v = [pcs_bound_given_v(4.0, vv, prob) for vv in grid_v]
        if np.any(np.diff(in_h) <= 0):
            failures.append(f"{v} bound not increasing in h")
        if np.any(np.diff(in_v) >= 0):
            failures.append(f"{v} bound not decreasing in v")
    record(6, not failures, "h_het >= h_hom, h_min >= h_E on 5 settings; bound monotone on 20-point grids"
           + ("; " + ", ".join(failures) if failures else ""))


class _NormalOracle:
    def __init__(self, beta, sds):
        self.beta, self.sds, self.k = np.asarray(beta), sds, 1

    def sample(self, i, x, size, rng):
        j = int(np.flatnonzero(np.all(self.points == x, axis=1))[0])
        return x @ self.beta + self.sds[j] * rng.standard_normal(size)


def test_criterion_07_stein_ks():
    design = build_design([[1, 0.0], [1, 0.5], [1, 1.0]])
    beta = np.array([1.0, -2.0])
    x = np.array([1.0, 0.7])
    reps = 10_000
    pvals = {}
    for mode, sds in (("hom", [2.0, 2.0, 2.0]), ("het", [1.0, 3.0, 2.0])):
        oracle = _NormalOracle(beta, sds)
        oracle.points = design.rows
        cfg = ProcedureConfig(h=3.0, delta=1.0, n0=5)
        z = np.empty(reps)
        for r in range(reps):
            if mode == "hom":
                rule, budget = run_fdhom(oracle, design, cfg, np.random.SeedSequence(7, spawn_key=(r,)))
                n = budget.sizes[0]
                z[r] = math.sqrt(n) * (x @ rule.betas[0] - x @ beta) / (sds[0] * math.sqrt(quadratic_form(x, design)))
            else:
                rule, budget = run_fdhet(oracle, design, cfg, np.random.SeedSequence(7, spawn_key=(r,)))
                cov = design.hat @ np.diag(np.square(sds) / budget.sizes[0]) @ design.hat.T
                z[r] = (x @ rule.betas[0] - x @ beta) / math.sqrt(x @ cov @ x)
        pvals[mode] = stats.kstest(z, "norm").pvalue
    ok = all(p >= 0.01 for p in pvals.values())
    record(7, ok, f"KS p-values hom {pvals['hom']:.3f}, het {pvals['het']:.3f} (10^4 reps, alpha 0.01)")


def grid_scan(design, d, step=0.05):
    axis = np.linspace(0.0, 1.0, int(round(1 / step)) + 1)
    pts = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return quadratic_form(np.column_stack([np.ones(len(pts)), pts]), design).max()


def test_criterion_08_corner_enumeration():
    rng = np.random.default_rng(8)
    designs = [("benchmark", factorial_design([(0.0, 0.5)] * 3))]
    while len(designs) < 11:
        d = int(rng.integers(1, 4))
        pts = rng.uniform(0, 1, size=(d + 1 + int(rng.integers(0, 5)), d))
        try:
            designs.append((f"random d={d}", build_design(np.column_stack([np.ones(len(pts)), pts]))))
        except SingularDesignError:
            continue
    worst = 0.0
    for _, design in designs:
        _, vmax = max_quadratic(CovariateSpace.unit_cube(design.d), design)
        worst = max(worst, abs(vmax - grid_scan(design, design.d)))
    record(8, worst <= 1e-9, f"max |corner - grid| = {worst:.2e} over {len(designs)} designs")


def test_criterion_09_lfc():
    p0 = benchmark_problem(0)
    cfg = fd_config("hom")
    comps = lfc_stress_test(p0, "fdhom", cfg, n_configs=5, R=200, T=10_000, seed=9)
    worst = max(c.diff / c.se if c.se > 0 else (0.0 if c.diff <= 0 else np.inf) for c in comps)
    gsc = run_experiment(ExperimentPlan(p0, "fdhom", cfg, R=200, T=10_000, seed=19)).pcs_e
    p3 = run_experiment(ExperimentPlan(benchmark_problem(3), "fdhom", cfg, R=200, T=10_000, seed=19)).pcs_e
    ok = all(c.diff <= 2 * c.se for c in comps) and p3 - gsc >= 0.02
    record(9, ok, f"max (GSC - perturbed)/se = {worst:.2f} <= 2 over 5 perturbations; "
                  f"Problem (3) {p3:.4f} vs GSC {gsc:.4f}")


def test_criterion_10_case_study():
    cfg = cli.RunConfig.from_dict({"problem": "case-study", "procedure": "fdhet", "delta": 1.0, "n0": 20,
                                   "R": 10, "T": 2000, "seed": 10})
    rep = cli.run_case_study(cfg)
    model = MarkovRewardModel()
    rng = np.random.default_rng(10)
    cs = case_study_problem(model)
    xs = cs.dist.sample(rng, 100)
    ages = rng.uniform(55, 115, size=100)
    row_err = max(np.abs(model.kernels(i, xs, ages).sum(axis=-1) - 1).max() for i in range(3))
    qalys = np.concatenate([model.simulate(int(i % 3), x, 1000, rng) for i, x in enumerate(xs)])
    finite = qalys.size == 100_000 and bool(np.all(np.isfinite(qalys)))
    pcs_ok = rep.pcs_rule >= max(rep.pcs_dagger, rep.pcs_ddagger)
    jensen_ok = rep.qaly_oracle >= rep.qaly_ddagger
    ok = pcs_ok and jensen_ok and row_err <= 1e-12 and finite
    record(10, ok, f"PCS rule {rep.pcs_rule:.4f} vs constant {rep.pcs_dagger:.4f}/{rep.pcs_ddagger:.4f}; "
                   f"E[Y_i*] {rep.qaly_oracle:.3f} >= E[Y_i++] {rep.qaly_ddagger:.3f}; "
                   f"row error {row_err:.1e}; 1e5 QALYs finite {finite}")


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted((n, f) for n, f in globals().items() if n.startswith("test_criterion")):
        try:
            fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
