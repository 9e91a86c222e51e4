"""Command-line front end.

    ddsro gen        write a synthetic labeled dataset (CSV)
    ddsro fit        learn class probabilities, mixtures and uncertainty sets (JSON)
    ddsro solve      run the decomposition on a fitted model
    ddsro benchmark  compare deterministic / scenario SP / DDSRO / DDANRO / box ARO

Exit codes: 0 success, 1 usage or validation error, 2 no convergence,
3 infeasible instance or incomplete recourse.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dataio import DataError, load_dataset, write_dataset
from .dpmm import DpmmConfig
from .lp import LpError
from .models.comparators import ComparatorError
from .models.motivating import build_motivating_example, gen_synthetic_motivating
from .models.planning import PlanningInstance, SYNTHETIC_INSTANCE, build_planning_problem, gen_planning_data
from .models.problem import CompactProblem, ProblemError
from .pipeline import (METHODS, PipelineError, UncertaintyModel, fit_planning_model, fit_uncertainty_model,
                       joint_samples, run_benchmark, solve_model)
from .report import relative_gap
from .robust import IncompleteRecourseError, InfeasibleInstanceError, RobustError
from .sets import SetError, enumerate_vertices

log = logging.getLogger("ddsro")

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED, EXIT_INFEASIBLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _unit_interval(text):
    v = float(text)
    if not 0 <= v < 1:
        raise argparse.ArgumentTypeError("must lie in [0, 1)")
    return v


def _existing(path):
    if path is not None and not Path(path).exists():
        raise UsageError(f"{path}: no such file")
    return path


def _dpmm_config(args) -> DpmmConfig:
    return DpmmConfig(truncation=args.truncation, alpha=args.alpha, seed=args.seed)


def load_problem(which: str, instance=None) -> CompactProblem:
    """``motivating``, ``planning`` (optionally with an instance JSON) or a CompactProblem JSON file."""
    if which == "motivating":
        return build_motivating_example()
    if which == "planning":
        return build_planning_problem(PlanningInstance.load(_existing(instance) or SYNTHETIC_INSTANCE))
    _existing(which)
    return CompactProblem.from_dict(json.loads(Path(which).read_text()))


def write_iterations_csv(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "lower_bound", "upper_bound", "gap"])
        for r, (lb, ub) in enumerate(zip(report.lower_bounds, report.upper_bounds), start=1):
            w.writerow([r, repr(lb), repr(ub), repr(relative_gap(lb, ub))])


def write_vertices_csv(path, model: UncertaintyModel, dims=(0, 1)):
    """Set vertices projected onto two coordinates, for external plotting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "component", "vertex", f"u{dims[0] + 1}", f"u{dims[1] + 1}"])
        for cid, union in model.unions.items():
            for k, bs in enumerate(union.basics):
                for v, u in enumerate(enumerate_vertices(bs)):
                    w.writerow([model.class_names.get(cid, cid), k, v, repr(float(u[dims[0]])), repr(float(u[dims[1]]))])


def format_iterations(report) -> str:
    lines = [f"{'r':>3} {'LB':>16} {'UB':>16} {'gap':>10}"]
    for r, (lb, ub) in enumerate(zip(report.lower_bounds, report.upper_bounds), start=1):
        lines.append(f"{r:>3} {lb:>16.6f} {ub:>16.6f} {relative_gap(lb, ub):>10.3e}")
    return "\n".join(lines)


def format_benchmark(rows, sense="min") -> str:
    head = f"{'method':<14} {('min' if sense == 'min' else 'max') + '. obj':>14} {'iters':>6} {'cpu (s)':>9}  x"
    out = [head]
    for r in rows:
        xs = ", ".join(f"{v:.2f}" for v in r.x[:6]) + (", ..." if len(r.x) > 6 else "")
        it = "N/A" if r.iterations is None else str(r.iterations)
        out.append(f"{r.method:<14} {r.objective:>14.4f} {it:>6} {r.cpu_seconds:>9.2f}  [{xs}]")
    return "\n".join(out)


def write_benchmark_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "objective", "iterations", "cpu_seconds", "converged", "x"])
        for r in rows:
            w.writerow([r.method, repr(float(r.objective)), "" if r.iterations is None else r.iterations,
                        repr(float(r.cpu_seconds)), int(r.converged), ";".join(repr(float(v)) for v in r.x)])


def read_benchmark_csv(path):
    with open(path, newline="") as fh:
        return [{"method": row["method"], "objective": float(row["objective"]),
                 "iterations": int(row["iterations"]) if row["iterations"] else None,
                 "cpu_seconds": float(row["cpu_seconds"]), "converged": bool(int(row["converged"])),
                 "x": [float(v) for v in row["x"].split(";")] if row["x"] else []}
                for row in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    if args.kind == "motivating":
        if not args.out:
            raise UsageError("--out is required")
        ds = gen_synthetic_motivating(args.seed, args.n)
        write_dataset(ds, args.out)
        print(f"wrote {len(ds)} points in {len(ds.class_ids)} classes to {args.out}")
    else:
        if not (args.demand_out and args.supply_out):
            raise UsageError("--demand-out and --supply-out are required for planning data")
        dem, sup = gen_planning_data(args.seed)
        write_dataset(dem, args.demand_out)
        write_dataset(sup, args.supply_out)
        print(f"wrote {len(dem)} demand and {len(sup)} supply points")
    return EXIT_OK


def _fit(args, merged=None) -> UncertaintyModel:
    merged = args.merged if merged is None else merged
    cfg = _dpmm_config(args)

    def report(cid, name, post):
        log.info("class %s: %d sweeps, ELBO %s", name, post.iterations,
                 " ".join(f"{e:.4f}" for e in post.elbo_trace))

    if args.data:
        ds = load_dataset(_existing(args.data))
        return fit_uncertainty_model(ds, args.gamma_star, args.budget, cfg, args.scaling, merged, report)
    if not (args.demand and args.supply):
        raise UsageError("give --data, or --demand and --supply")
    pi = PlanningInstance.load(_existing(args.instance) or SYNTHETIC_INSTANCE)
    dem, sup = load_dataset(_existing(args.demand)), load_dataset(_existing(args.supply))
    return fit_planning_model(pi, dem, sup, args.gamma_star, args.budget_demand or args.budget,
                              args.budget_supply or args.budget, cfg, args.scaling, merged, report)


def cmd_fit(args) -> int:
    model = _fit(args)
    Path(args.out).write_text(json.dumps(model.to_dict(), indent=1) + "\n")
    for cid, union in model.unions.items():
        print(f"class {model.class_names.get(cid, cid)}: p={model.probs[cid]:.6g}, "
              f"{len(union.basics)} basic set(s)")
    if args.vertices_csv:
        write_vertices_csv(args.vertices_csv, model)
    return EXIT_OK


def cmd_solve(args) -> int:
    problem = load_problem(args.problem, args.instance)
    model = UncertaintyModel.from_dict(json.loads(Path(_existing(args.model)).read_text()))
    rep = solve_model(problem, model, args.zeta, args.max_iters, slack=args.slack, workers=args.workers)
    print(format_iterations(rep))
    print(f"objective ({problem.sense}) = {rep.objective:.6f}, iterations = {rep.iterations}, "
          f"final gap = {rep.gap:.3e}, wall = {rep.wall_time:.2f}s")
    if args.out:
        Path(args.out).write_text(rep.to_json(indent=1) + "\n")
    if args.iterations_csv:
        write_iterations_csv(args.iterations_csv, rep)
    if not rep.converged:
        print(f"not converged: gap {rep.gap:.3e} > zeta {args.zeta:g}", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_benchmark(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown method(s) {', '.join(bad)}; choose from {', '.join(METHODS)}")
    problem = load_problem(args.problem, args.instance)
    if args.data:
        points = load_dataset(_existing(args.data)).points
        scenarios = None
    elif args.demand and args.supply:
        dem, sup = load_dataset(_existing(args.demand)), load_dataset(_existing(args.supply))
        points = joint_samples(dem, sup)
        scenarios = joint_samples(dem, sup, args.sp_samples, args.seed)
    else:
        raise UsageError("give --data, or --demand and --supply")
    labeled = _fit(args, merged=False) if "ddsro" in methods else None
    unlabeled = _fit(args, merged=True) if "ddanro" in methods else None
    rows = run_benchmark(problem, points, labeled, unlabeled, methods, args.sp_samples, args.seed,
                         args.zeta, args.max_iters, scenarios)
    print(format_benchmark(rows, problem.sense))
    if args.out_csv:
        write_benchmark_csv(args.out_csv, rows)
    return EXIT_OK if all(r.converged for r in rows) else EXIT_NONCONVERGED


# ---------------------------------------------------------------------------
# argument parsing


def _add_fit_args(p):
    p.add_argument("--data", help="labeled CSV (u1..ud,label)")
    p.add_argument("--demand", help="planning: labeled demand CSV")
    p.add_argument("--supply", help="planning: labeled supply CSV")
    p.add_argument("--instance", help="planning instance JSON (default: shipped synthetic instance)")
    p.add_argument("--gamma-star", type=_unit_interval, default=0.05, help="component weight threshold (default 0.05)")
    p.add_argument("--budget", type=_positive_int, default=2, help="uncertainty budget Phi (integer, default 2)")
    p.add_argument("--budget-demand", type=_positive_int, help="planning: demand-block budget (default --budget)")
    p.add_argument("--budget-supply", type=_positive_int, help="planning: supply-block budget (default --budget)")
    p.add_argument("--truncation", type=_positive_int, default=10, help="DP truncation level M (default 10)")
    p.add_argument("--alpha", type=_positive_float, default=1.0, help="DP concentration (default 1.0)")
    p.add_argument("--scaling", choices=["identity", "coverage"], default="identity",
                   help="scaling of the basic sets (default identity)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--merged", action="store_true", help="ignore labels (single class)")


def _add_solve_args(p):
    p.add_argument("--problem", default="motivating",
                   help="'motivating', 'planning' or a problem JSON file (default motivating)")
    p.add_argument("--zeta", type=_positive_float, default=1e-3, help="relative gap tolerance (default 1e-3)")
    p.add_argument("--max-iters", type=_positive_int, default=50)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ddsro", description="Data-driven stochastic robust optimization toolkit")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic labeled dataset")
    g.add_argument("--kind", choices=["motivating", "planning"], default="motivating")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=_positive_int, default=1000, help="number of points (motivating)")
    g.add_argument("--out", help="output CSV (motivating)")
    g.add_argument("--demand-out", help="output demand CSV (planning)")
    g.add_argument("--supply-out", help="output supply CSV (planning)")
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", help="fit the uncertainty model")
    _add_fit_args(f)
    f.add_argument("--out", required=True, help="model JSON")
    f.add_argument("--vertices-csv", help="write set vertices projected to (u1, u2)")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("solve", help="solve the stochastic robust problem on a fitted model")
    _add_solve_args(s)
    s.add_argument("--model", required=True, help="model JSON from 'fit'")
    s.add_argument("--instance", help="planning instance JSON")
    s.add_argument("--out", help="report JSON")
    s.add_argument("--iterations-csv", help="write LB/UB per iteration")
    s.add_argument("--slack", action="store_true", help="penalized recourse slacks (complete recourse)")
    s.add_argument("--workers", type=_positive_int, default=1, help="threads for subproblems")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("benchmark", help="compare optimization methods on one problem")
    _add_fit_args(b)
    _add_solve_args(b)
    b.add_argument("--methods", default=",".join(METHODS), help=f"comma list from {', '.join(METHODS)}")
    b.add_argument("--sp-samples", type=_positive_int, default=100, help="scenarios for the SP comparator")
    b.add_argument("--out-csv", help="write the comparison table as CSV")
    b.set_defaults(func=cmd_benchmark)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (IncompleteRecourseError, InfeasibleInstanceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (UsageError, DataError, PipelineError, ProblemError, SetError, ComparatorError, RobustError,
            LpError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
