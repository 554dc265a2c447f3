"""Ranking and selection with covariates: two-stage fixed-design procedures."""

from .constants import HProblem, HSolution, solve_h, solve_h_detailed
from .design import CovariateDistribution, CovariateSpace, build_design, factorial_design, max_quadratic
from .evaluation import ExperimentPlan, ExperimentReport, run_experiment
from .problems import benchmark_problem, case_study_problem, make_gsc
from .procedures import DecisionRule, ProcedureConfig, run_fdhet, run_fdhom

__all__ = [
    "HProblem", "HSolution", "solve_h", "solve_h_detailed",
    "CovariateDistribution", "CovariateSpace", "build_design", "factorial_design", "max_quadratic",
    "ExperimentPlan", "ExperimentReport", "run_experiment",
    "benchmark_problem", "case_study_problem", "make_gsc",
    "DecisionRule", "ProcedureConfig", "run_fdhet", "run_fdhom",
]
