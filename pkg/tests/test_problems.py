import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covsel.design import CovariateSpace, expect_over_covariates, factorial_design
from covsel.problems import (DEAD, PROBLEM3_SEED, CaseStudy, HomNoise, LinearHetNoise, MarkovRewardModel,
                             UnknownProblemError, age_pmf, benchmark_problem, case_study_problem,
                             check_case_covariate, linear_oracle, make_gsc, problem_from_dict,
                             problem_to_dict, simulate_patient, true_best)


def test_make_gsc_benchmark():
    beta = make_gsc(5, 3, 1.0, [1, 1, 1, 1])
    np.testing.assert_array_equal(beta[0], [1, 1, 1, 1])
    np.testing.assert_array_equal(beta[1:], np.tile([0, 1, 1, 1], (4, 1)))


def test_make_gsc_zero_slopes_is_slippage():
    beta = make_gsc(3, 2, 0.5, [2, 0, 0])
    np.testing.assert_array_equal(beta, [[2, 0, 0], [1.5, 0, 0], [1.5, 0, 0]])


def test_make_gsc_validation():
    with pytest.raises(ValueError):
        make_gsc(1, 2, 1.0, [0, 0, 0])
    with pytest.raises(ValueError):
        make_gsc(3, 2, 0.0, [0, 0, 0])
    with pytest.raises(ValueError):
        make_gsc(3, 2, 1.0, [0, 0])


@settings(max_examples=50, deadline=None)
@given(k=st.integers(2, 8), d=st.integers(1, 5), delta=st.floats(0.01, 10), seed=st.integers(0, 10 ** 6))
def test_gsc_gap_is_delta_everywhere(k, d, delta, seed):
    rng = np.random.default_rng(seed)
    beta = make_gsc(k, d, delta, rng.normal(size=d + 1))
    xs = np.column_stack([np.ones(20), rng.uniform(-5, 5, size=(20, d))])
    mu = xs @ beta.T
    np.testing.assert_allclose(mu[:, :1] - mu[:, 1:], delta, atol=1e-12 * (1 + np.abs(mu).max()))


def test_benchmark_configurations():
    p0 = benchmark_problem(0)
    assert (p0.k, p0.d, p0.design.m) == (5, 3, 8)
    assert p0.noise == HomNoise((10.0,) * 5)
    assert benchmark_problem(1).k == 2 and benchmark_problem(2).k == 8
    assert benchmark_problem(4).noise.sigmas == (5.0, 7.5, 10.0, 12.5, 15.0)
    assert benchmark_problem(5).noise.sigmas == (15.0, 12.5, 10.0, 7.5, 5.0)
    assert isinstance(benchmark_problem(6).noise, LinearHetNoise)
    assert benchmark_problem(7).d == 1 and benchmark_problem(8).design.m == 32
    with pytest.raises(UnknownProblemError):
        benchmark_problem(9)


def test_problem3_seeded_betas():
    p3 = benchmark_problem(3)
    ref = np.random.default_rng(PROBLEM3_SEED).uniform(0, 5, size=(5, 4))
    np.testing.assert_array_equal(p3.beta, ref)
    np.testing.assert_array_equal(true_best(p3, [1, 0, 0, 0]), [np.argmax(ref[:, 0])])


def test_true_best_sets():
    p0 = benchmark_problem(0)
    np.testing.assert_array_equal(true_best(p0, [1, 0.3, 0.2, 0.9]), [0])
    twin = p0.with_beta(np.vstack([p0.beta[0], p0.beta[0], p0.beta[2:]]))
    np.testing.assert_array_equal(true_best(twin, [1, 0.3, 0.2, 0.9]), [0, 1])


def test_oracle_tiny_noise_equals_mean():
    p = benchmark_problem(0)
    p = type(p)(p.beta, HomNoise((1e-12,) * 5), p.dist, p.design)
    x = np.array([1.0, 0.5, 0.0, 0.5])
    y = linear_oracle(p).sample(2, x, 100, np.random.default_rng(0))
    np.testing.assert_allclose(y, x @ p.beta[2], atol=1e-10)


def test_oracle_moments():
    y = benchmark_problem(0).oracle().sample(0, np.array([1.0, 0, 0, 0]), 100_000, np.random.default_rng(42))
    assert y.mean() == pytest.approx(1.0, abs=0.1)
    assert y.std() == pytest.approx(10.0, abs=0.2)


def test_het_oracle_sd_scales_with_mean():
    p6 = benchmark_problem(6)
    rng = np.random.default_rng(3)
    x1, x2 = np.array([1.0, 0.5, 0.5, 0.5]), np.array([1.0, 0, 0, 0.5])
    s1 = p6.oracle().sample(1, x1, 200_000, rng).std()
    s2 = p6.oracle().sample(1, x2, 200_000, rng).std()
    assert s1 / s2 == pytest.approx((x1 @ p6.beta[1]) / (x2 @ p6.beta[1]), rel=0.02)


def test_problem_validation():
    p = benchmark_problem(0)
    with pytest.raises(ValueError):
        HomNoise((1.0, -1.0))
    with pytest.raises(ValueError):
        type(p)(p.beta, HomNoise((1.0,) * 4), p.dist, p.design)
    with pytest.raises(ValueError):
        type(p)(-p.beta, LinearHetNoise(1.0), p.dist, p.design)
    with pytest.raises(ValueError):
        type(p)(p.beta, p.noise, p.dist, factorial_design([(0.0, 2.0)] * 3), CovariateSpace.unit_cube(3))


@pytest.mark.parametrize("pid", [0, 3, 6, 7])
def test_problem_serialization_roundtrip(pid):
    p = benchmark_problem(pid)
    data = json.loads(json.dumps(problem_to_dict(p)))
    q = problem_from_dict(data)
    np.testing.assert_array_equal(q.beta, p.beta)
    assert q.noise == p.noise and q.dist == p.dist and q.design == p.design
    assert problem_to_dict(q) == data
    with pytest.raises(ValueError):
        problem_from_dict({**data, "colour": 1})


def test_jensen_ordering_on_benchmarks():
    for pid in (0, 3, 4):
        p = benchmark_problem(pid)
        e_max = expect_over_covariates(lambda x: p.means(x).max(axis=1), p.dist, vectorized=True)
        max_e = expect_over_covariates(p.means, p.dist, vectorized=True).max()
        assert e_max >= max_e - 1e-12


# -- Markov model -------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(age=st.floats(55, 120), rate=st.floats(0, 0.1), e3=st.floats(0, 1), e4=st.floats(0, 1),
       regimen=st.integers(0, 2))
def test_kernel_rows_sum_to_one(age, rate, e3, e4, regimen):
    K = MarkovRewardModel().kernels(regimen, np.array([1.0, 60.0, rate, e3, e4]), age)
    assert np.all(K >= 0)
    np.testing.assert_allclose(K.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(K[DEAD], np.eye(6)[DEAD])


def test_forced_death_at_max_age():
    K = MarkovRewardModel().kernels(0, np.array([1.0, 60.0, 0.05, 0.5, 0.5]), 110.0)
    np.testing.assert_array_equal(K[:, DEAD], 1.0)


def test_immediate_death_gives_zero():
    model = MarkovRewardModel(qaly_weights=(1, 1, 1, 1, 1, 0), max_age=50.0)
    assert simulate_patient(model, 0, [1.0, 60.0, 0.05, 0.5, 0.5], np.random.default_rng(0)) == 0.0


def test_zero_progression_gives_mortality_only_lifetime():
    model = MarkovRewardModel(qaly_weights=(1, 1, 1, 1, 1, 0))
    x = np.array([1.0, 65.0, 0.0, 0.5, 0.5])
    ages = 65.0 + np.arange(model.horizon(65.0)) / 12.0
    survival = np.cumprod(1.0 - model.background_death(ages))
    closed_form = survival.sum() / 12.0
    assert model.expected_qalys(0, x[None])[0] == pytest.approx(closed_form, rel=1e-12)
    sims = model.simulate(0, x, 20_000, np.random.default_rng(1))
    assert sims.mean() == pytest.approx(closed_form, abs=4 * sims.std() / np.sqrt(len(sims)))


def test_fast_cohort_matches_dense_kernels():
    cs = case_study_problem()
    xs = cs.dist.sample(np.random.default_rng(0), 200)
    for i in range(3):
        np.testing.assert_allclose(cs.model.expected_qalys(i, xs), cs.model.cohort_qalys(i, xs), rtol=1e-12)


@pytest.mark.parametrize("regimen", [0, 1, 2])
def test_simulation_matches_cohort_mean(regimen):
    model = MarkovRewardModel()
    x = np.array([1.0, 62.0, 0.08, 0.6, 0.3])
    sims = model.simulate(regimen, x, 40_000, np.random.default_rng(regimen))
    exact = model.expected_qalys(regimen, x[None])[0]
    assert np.all(np.isfinite(sims)) and np.all(sims >= 0)
    assert sims.mean() == pytest.approx(exact, abs=4 * sims.std() / np.sqrt(len(sims)))


def test_full_drug_effect_dominates():
    model = MarkovRewardModel()
    on = np.array([1.0, 60.0, 0.1, 1.0, 0.5])
    off = np.array([1.0, 60.0, 0.1, 0.0, 0.5])
    assert model.monthly_progression(on, 1) == 0.0
    assert model.expected_qalys(1, on[None])[0] >= model.expected_qalys(1, off[None])[0]
    a = model.simulate(1, on, 20_000, np.random.default_rng(9))
    b = model.simulate(1, off, 20_000, np.random.default_rng(9))
    assert a.mean() >= b.mean()


def test_invalid_case_covariate():
    with pytest.raises(ValueError):
        check_case_covariate([1.0, 50.0, 0.05, 0.5, 0.5])
    with pytest.raises(ValueError):
        MarkovRewardModel().simulate(0, [1.0, 60.0, 0.2, 0.5, 0.5], 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        check_case_covariate([60.0, 0.05, 0.5, 0.5])


def test_markov_validation_and_roundtrip():
    with pytest.raises(ValueError):
        MarkovRewardModel(qaly_weights=(1, 1, 1, 1, 1, 0.5))
    with pytest.raises(ValueError):
        MarkovRewardModel(qaly_weights=(1.2, 1, 1, 1, 1, 0))
    with pytest.raises(ValueError):
        MarkovRewardModel.from_dict({"speed": 3})
    model = MarkovRewardModel(hgd_treated=0.05)
    assert MarkovRewardModel.from_dict(json.loads(model.to_json())) == model


def test_case_study_setup():
    cs = case_study_problem()
    assert isinstance(cs, CaseStudy) and cs.k == 3
    assert cs.design.m == 16 and cs.design.d == 4
    assert cs.space.contains(cs.design.rows)
    assert cs.dist.mean[1] == pytest.approx(64.78, abs=1e-9)
    np.testing.assert_allclose(cs.dist.mean[2:], [0.05, 0.53, 0.54], atol=0.005)
    corners = cs.space.corners()
    assert corners[:, 1].min() == 55 and corners[:, 1].max() == 80
    assert corners[:, 2].max() == 0.1 and corners[:, 3].max() == 1.0


def test_age_pmf():
    pmf = age_pmf()
    assert pmf.values[0] == 55 and pmf.values[-1] == 80 and len(pmf.values) == 26
    assert pmf.mean == pytest.approx(64.78, abs=1e-9)


def test_case_study_oracle_and_means():
    cs = case_study_problem()
    rng = np.random.default_rng(0)
    xs = cs.dist.sample(rng, 5)
    mu = cs.means(xs)
    assert mu.shape == (5, 3) and np.all(np.isfinite(mu))
    y = cs.oracle().sample(2, cs.design.rows[0], 10, rng)
    assert y.shape == (10,)
