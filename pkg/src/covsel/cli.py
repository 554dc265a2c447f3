"""Command-line interface: solve-h, run, reproduce, case-study.

Configs are YAML or JSON documents validated against ``CONFIG_SCHEMA``;
unknown keys are rejected. Exit codes: 0 success, 1 invalid input,
2 numerical or simulation failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import evaluation
from .constants import HProblem, solve_h_detailed
from .design import ExpectationScheme, covariate_rule, expect_over_covariates
from .numerics import NumericsError
from .problems import (BENCHMARK_IDS, BENCHMARK_NAMES, MarkovRewardModel, benchmark_problem,
                       case_study_problem, problem_from_dict)
from .procedures import ProcedureConfig, ProcedureError

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2
VARIANCE_OF = {"fdhom": "hom", "fdhet": "het"}

_num = {"type": "number"}
_marginal = {
    "type": "object",
    "required": ["kind"],
    "properties": {"kind": {"enum": ["uniform", "triangular", "pmf"]}, "lo": _num, "mode": _num,
                   "hi": _num, "values": {"type": "array", "items": _num},
                   "probs": {"type": "array", "items": _num}},
    "additionalProperties": False,
}
_inline_problem = {
    "type": "object",
    "required": ["beta", "noise", "covariates", "design"],
    "properties": {
        "name": {"type": "string"},
        "beta": {"type": "array", "items": {"type": "array", "items": _num}, "minItems": 2},
        "noise": {"type": "object", "required": ["kind"],
                  "properties": {"kind": {"enum": ["hom", "het"]},
                                 "sigmas": {"type": "array", "items": _num}, "scale": _num},
                  "additionalProperties": False},
        "covariates": {"type": "array", "items": _marginal, "minItems": 1},
        "design": {"type": "array", "items": {"type": "array", "items": _num}, "minItems": 1},
    },
    "additionalProperties": False,
}
CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "problem": {"oneOf": [{"type": "integer", "minimum": 0, "maximum": 8},
                              {"const": "case-study"}, _inline_problem]},
        "procedure": {"enum": ["fdhom", "fdhet"]},
        "form": {"enum": ["expectation", "minimum"]},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "delta": {"type": "number", "exclusiveMinimum": 0},
        "n0": {"type": "integer", "minimum": 2},
        "R": {"type": "integer", "minimum": 1},
        "T": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "scale": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "h": {"oneOf": [{"type": "null"}, {"type": "number", "exclusiveMinimum": 0}]},
        "out": {"type": ["string", "null"]},
        "markov": {"oneOf": [{"type": "null"}, {"type": "string"}, {"type": "object"}]},
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    problem: object = 0  # benchmark id, "case-study", or an inline problem dict
    procedure: str = "fdhom"
    form: str = "expectation"
    alpha: float = 0.05
    delta: float = 1.0
    n0: int = 50
    R: int = 200
    T: int = 10_000
    seed: int = 0
    scale: float = 0.02
    h: float | None = None
    out: str | None = None
    markov: object = None  # path to a parameter file or an inline dict

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        try:
            jsonschema.validate(data, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {where}: {exc.message}") from None
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return RunConfig.from_dict({**self.to_dict(), **changes})


def load_document(path: str | os.PathLike) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a mapping")
    return data


def load_config(path: str | os.PathLike | None) -> RunConfig:
    return RunConfig() if path is None else RunConfig.from_dict(load_document(path))


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


# -- building blocks ---------------------------------------------------------

def build_problem(cfg: RunConfig):
    if cfg.problem == "case-study":
        return case_study_problem(build_markov(cfg))
    if isinstance(cfg.problem, dict):
        return problem_from_dict(cfg.problem)
    return benchmark_problem(int(cfg.problem))


def build_markov(cfg: RunConfig) -> MarkovRewardModel:
    if cfg.markov is None:
        return MarkovRewardModel()
    data = load_document(cfg.markov) if isinstance(cfg.markov, str) else cfg.markov
    return MarkovRewardModel.from_dict(data)


def h_problem(problem, variance: str, form: str, n0: int, alpha: float) -> HProblem:
    return HProblem(variance=variance, form=form, k=problem.k, n0=n0, design=problem.design,
                    alpha=alpha, dist=problem.dist, space=problem.space)


def h_cache_key(hp: HProblem) -> str:
    """Content hash of everything the solved h depends on."""
    pts, wts = (None, None)
    if hp.form == "expectation":
        pts, wts = covariate_rule(hp.dist, hp.scheme)
    payload = {
        "variance": hp.variance, "form": hp.form, "k": hp.k, "n0": hp.n0, "alpha": hp.alpha,
        "nodes": hp.nodes, "design": hp.design.rows.tolist(),
        "space": None if hp.form == "expectation" else hp.space.corners().tolist(),
        "rule": None if pts is None else hashlib.sha256(pts.tobytes() + wts.tobytes()).hexdigest(),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


class HCache:
    """On-disk map from content hash to solved h."""

    def __init__(self, path: str | os.PathLike | None):
        self.path = Path(path) if path else None
        self.data = {}
        if self.path and self.path.is_file():
            self.data = json.loads(self.path.read_text())

    def solve(self, hp: HProblem) -> float:
        key = h_cache_key(hp)
        if key not in self.data:
            self.data[key] = solve_h_detailed(hp).h
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self.path.write_text(json.dumps(self.data, indent=1, sort_keys=True))
        return self.data[key]


def write_output(text: str, out: str | None):
    if out:
        Path(out).write_text(text)


# -- commands ------------------------------------------------------------------

def cmd_solve_h(cfg: RunConfig, args) -> int:
    problem = build_problem(cfg)
    hp = h_problem(problem, VARIANCE_OF[cfg.procedure], cfg.form, cfg.n0, cfg.alpha)
    sol = solve_h_detailed(hp)
    lines = [f"h: {sol.h:.4f}", f"dof: {sol.dof}", f"variance: {hp.variance}", f"form: {hp.form}",
             f"bound: {sol.bound:.6f}"]
    if sol.x0 is not None:
        lines += [f"x0: {np.array2string(sol.x0, separator=', ')}", f"v_max: {sol.v_max:.6g}"]
    if sol.n_points is not None:
        lines.append(f"nodes: {sol.n_points}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    write_output(text, cfg.out)
    return EXIT_OK


def _plan(cfg: RunConfig, problem, h: float) -> evaluation.ExperimentPlan:
    pc = ProcedureConfig(h=h, delta=cfg.delta, n0=cfg.n0, alpha=cfg.alpha, form=cfg.form,
                         variance=VARIANCE_OF[cfg.procedure])
    return evaluation.ExperimentPlan(problem, cfg.procedure, pc, R=cfg.R, T=cfg.T, seed=cfg.seed)


def cmd_run(cfg: RunConfig, args) -> int:
    problem = build_problem(cfg)
    h = cfg.h
    if h is None:
        h = solve_h_detailed(h_problem(problem, VARIANCE_OF[cfg.procedure], cfg.form, cfg.n0, cfg.alpha)).h
    report = evaluation.run_experiment(_plan(cfg, problem, h), workers=args.workers)
    row = evaluation.report_row(getattr(problem, "name", "") or str(cfg.problem), cfg.procedure, report)
    row["SE(PCS_E)"] = f"{report.se_pcs_e:.4f}"
    row["SE(PCS_min)"] = f"{report.se_pcs_min:.4f}"
    sys.stdout.write(evaluation.format_table([row]))
    write_output(evaluation.to_csv([row]), cfg.out)
    return EXIT_OK


# Reference values: (h, Sample, PCS_E, PCS_min) for FDHom then FDHet, per problem.
REFERENCE = {
    1: [((3.423, 46865, .9610, .7439), (4.034, 65138, .9801, .8080)),
        ((2.363, 8947, .9501, .8084), (2.781, 12380, .9702, .8517)),
        ((3.822, 93542, .9650, .7246), (4.510, 130200, .9842, .8052)),
        ((3.423, 46865, .9987, .9410), (4.034, 65138, .9994, .9615)),
        ((3.423, 52698, .9618, .7549), (4.034, 73265, .9807, .8147)),
        ((3.423, 52720, .9614, .7501), (4.034, 73246, .9806, .8114)),
        ((3.423, 58626, .9232, .6336), (4.034, 81555, .9846, .8591)),
        ((4.612, 21288, .9593, .7941), (4.924, 24266, .9662, .8223)),
        ((2.141, 73428, .9656, .7446), (2.710, 117630, .9895, .8379))],
    2: [((5.927, 140540, .9989, .9594), (6.990, 195340, .9997, .9825)),
        ((4.362, 30447, .9958, .9466), (5.132, 42164, .9987, .9701)),
        ((6.481, 268750, .9993, .9642), (7.651, 374720, .9999, .9849)),
        ((5.927, 140540, 1.0, .9958), (6.990, 195340, 1.0, .9981)),
        ((5.927, 158140, .9989, .9574), (6.990, 219870, .9998, .9862)),
        ((5.927, 158100, .9990, .9617), (6.990, 219740, .9998, .9826)),
        ((5.927, 175700, .9952, .8999), (6.990, 244490, .9999, .9899)),
        ((7.155, 51161, .9954, .9600), (7.648, 58493, .9971, .9708)),
        ((3.792, 230220, .9994, .9539), (4.804, 369310, 1.0, .9907))],
}


def reproduce_rows(table: int, scale: float, seed: int = 0, workers: int = 1,
                   cache: HCache | None = None, problems=BENCHMARK_IDS) -> list[dict]:
    if table not in REFERENCE:
        raise ConfigError("table must be 1 or 2")
    if not 0 < scale <= 1:
        raise ConfigError("scale must lie in (0, 1]")
    R, T = math.ceil(scale * 1e4), math.ceil(scale * 1e5)
    form = "expectation" if table == 1 else "minimum"
    cache = cache or HCache(None)
    rows = []
    for pid in problems:
        problem = benchmark_problem(pid)
        row = {"Problem": f"({pid}) {BENCHMARK_NAMES[pid]}"}
        for proc, ref in zip(("fdhom", "fdhet"), REFERENCE[table][pid]):
            tag = "Hom" if proc == "fdhom" else "Het"
            h = cache.solve(h_problem(problem, VARIANCE_OF[proc], form, 50, 0.05))
            pc = ProcedureConfig(h=h, delta=1.0, n0=50, form=form, variance=VARIANCE_OF[proc])
            rep = evaluation.run_experiment(evaluation.ExperimentPlan(problem, proc, pc, R, T, seed), workers)
            ours = (h, rep.mean_total, rep.pcs_e, rep.pcs_min)
            for name, fmt, mine, theirs in zip(("h", "Sample", "PCS_E", "PCS_min"),
                                               ("{:.3f}", "{:.0f}", "{:.4f}", "{:.4f}"), ours, ref):
                row[f"{tag} {name}"] = fmt.format(mine)
                row[f"{tag} {name} ref"] = fmt.format(theirs)
                row[f"{tag} {name} dev"] = fmt.format(abs(mine - theirs))
        rows.append(row)
    return rows


def cmd_reproduce(cfg: RunConfig, args) -> int:
    scale = args.scale if args.scale is not None else cfg.scale
    cache_path = args.cache or os.environ.get("COVSEL_CACHE") or Path.home() / ".cache" / "covsel" / "h.json"
    rows = reproduce_rows(args.table, scale, cfg.seed, args.workers, HCache(cache_path))
    cols = ["Problem"] + [f"{tag} {name}" for tag in ("Hom", "Het") for name in ("h", "Sample", "PCS_E", "PCS_min")]
    sys.stdout.write(f"Table {args.table}, R={math.ceil(scale * 1e4)}, T={math.ceil(scale * 1e5)}\n")
    sys.stdout.write(evaluation.format_table(rows, cols))
    sys.stdout.write("\nreference\n")
    sys.stdout.write(evaluation.format_table(
        [{c: r[c if c == "Problem" else c + " ref"] for c in cols} for r in rows], cols))
    sys.stdout.write("\nabsolute deviation\n")
    sys.stdout.write(evaluation.format_table(
        [{c: r[c if c == "Problem" else c + " dev"] for c in cols} for r in rows], cols))
    write_output(evaluation.to_csv(rows), cfg.out)
    return EXIT_OK


@dataclass(frozen=True)
class CaseStudyReport:
    h: float
    i_dagger: int  # best regimen at the mean covariate
    i_ddagger: int  # best regimen on average
    pcs_rule: float
    pcs_dagger: float
    pcs_ddagger: float
    qaly_rule: float
    qaly_dagger: float
    qaly_ddagger: float
    qaly_oracle: float  # E[max_i Y_i(X)]
    mean_qalys: tuple[float, ...]
    mean_total: float
    near_tie: bool


def run_case_study(cfg: RunConfig, workers: int = 1) -> CaseStudyReport:
    """Personalized FDHet rule against the two constant rules on common test covariates."""
    cs = case_study_problem(build_markov(cfg))
    h = cfg.h or solve_h_detailed(h_problem(cs, "het", "expectation", cfg.n0, cfg.alpha)).h
    # mean QALYs are smooth in x, so a coarse tensor rule suffices
    mean_qalys = expect_over_covariates(cs.means, cs.dist, ExpectationScheme("tensor", 6), vectorized=True)
    i_dagger = int(np.argmax(cs.means(cs.dist.mean)[0]))
    i_ddagger = int(np.argmax(mean_qalys))
    pc = ProcedureConfig(h=h, delta=cfg.delta, n0=cfg.n0, alpha=cfg.alpha, variance="het")
    plan = evaluation.ExperimentPlan(cs, "fdhet", pc, cfg.R, cfg.T, cfg.seed, x0=cs.dist.mean)
    report = evaluation.run_experiment(plan, workers)
    recs = report.records
    alt_good = np.mean([r.alt_good for r in recs], axis=0)
    alt_values = np.mean([r.alt_values for r in recs], axis=0)
    return CaseStudyReport(
        h=h, i_dagger=i_dagger, i_ddagger=i_ddagger,
        pcs_rule=report.pcs_e,
        pcs_dagger=float(alt_good[i_dagger]),
        pcs_ddagger=float(alt_good[i_ddagger]),
        qaly_rule=float(np.mean([r.value for r in recs])),
        qaly_dagger=float(alt_values[i_dagger]),
        qaly_ddagger=float(alt_values[i_ddagger]),
        qaly_oracle=float(np.mean([r.best_value for r in recs])),
        mean_qalys=tuple(float(v) for v in mean_qalys),
        mean_total=report.mean_total,
        near_tie=bool(np.ptp(mean_qalys) < cfg.delta),
    )


def format_case_study(rep: CaseStudyReport) -> str:
    rows = [
        {"Rule": "personalized", "PCS_E-hat": f"{rep.pcs_rule:.4f}", "QALYs": f"{rep.qaly_rule:.4f}"},
        {"Rule": f"i_dagger = {rep.i_dagger}", "PCS_E-hat": f"{rep.pcs_dagger:.4f}",
         "QALYs": f"{rep.qaly_dagger:.4f}"},
        {"Rule": f"i_ddagger = {rep.i_ddagger}", "PCS_E-hat": f"{rep.pcs_ddagger:.4f}",
         "QALYs": f"{rep.qaly_ddagger:.4f}"},
        {"Rule": "oracle best", "PCS_E-hat": "1.0000", "QALYs": f"{rep.qaly_oracle:.4f}"},
    ]
    head = [f"h: {rep.h:.4f}", f"mean total patients: {rep.mean_total:.0f}",
            "mean QALYs by regimen: " + ", ".join(f"{v:.4f}" for v in rep.mean_qalys)]
    if rep.near_tie:
        head.append("warning: regimens are within delta of each other on average (near-tie)")
    if rep.pcs_rule < max(rep.pcs_dagger, rep.pcs_ddagger):
        head.append("warning: personalized rule did not beat the constant rules")
    return "\n".join(head) + "\n" + evaluation.format_table(rows)


def cmd_case_study(cfg: RunConfig, args) -> int:
    rep = run_case_study(cfg, args.workers)
    text = format_case_study(rep)
    sys.stdout.write(text)
    write_output(text, cfg.out)
    return EXIT_OK


# -- entry point ---------------------------------------------------------------

CASE_STUDY_DEFAULTS = {"problem": "case-study", "procedure": "fdhet", "delta": 0.2, "n0": 100, "R": 20,
                       "T": 10_000}


def _global_flags(parser: argparse.ArgumentParser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="YAML or JSON run config")
    parser.add_argument("--seed", type=int, default=default, help="master seed (overrides config)")
    parser.add_argument("--workers", type=int, default=argparse.SUPPRESS if suppress else 1,
                        help="worker processes; results do not depend on this")
    parser.add_argument("--out", default=default, help="output file (CSV or text)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="covsel", description="Ranking and selection with covariates")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    cmds = {
        "solve-h": "solve the critical constant h",
        "run": "run macro-replications of a procedure",
        "reproduce": "rerun the benchmark suite at reduced scale",
        "case-study": "personalized vs constant treatment rules on the Markov model",
    }
    for name, help_text in cmds.items():
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        if name == "reproduce":
            p.add_argument("--table", type=int, choices=(1, 2), required=True)
            p.add_argument("--scale", type=float, default=None, help="fraction of full R=1e4, T=1e5")
            p.add_argument("--cache", default=None, help="h cache file")
    return parser


COMMANDS = {"solve-h": cmd_solve_h, "run": cmd_run, "reproduce": cmd_reproduce, "case-study": cmd_case_study}


def resolve_config(args) -> RunConfig:
    if args.config is None and args.command == "case-study":
        cfg = RunConfig.from_dict(CASE_STUDY_DEFAULTS)
    else:
        cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = args.out
    return cfg.replace(**changes) if changes else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except (NumericsError, ProcedureError, FloatingPointError) as exc:
        if isinstance(exc, ValueError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError, yaml.YAMLError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
