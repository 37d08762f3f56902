"""Command-line entry point: run, compare, gridsearch, validate, summarize.

Exit codes: 0 success, 1 validation failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .algorithms import ALGORITHMS
from .errors import ConfigError, ParseError
from .harness import SUITES, grid_search, load_config, run_experiment, summarize, validate

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _add_experiment_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("config", help="YAML config path or bundled config name (e.g. quadratic, a9a)")
    sub.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    sub.add_argument("--budget", type=float, help="SZO budget in the config's budget unit")
    sub.add_argument("--budget-unit", choices=("nd", "szo"), help="unit of --budget")
    sub.add_argument("--out-dir", help="output directory for CSVs and summary.json")
    sub.add_argument("--sample-every", type=int, help="record a sample every this many iterations")
    sub.add_argument("--jobs", type=int, help="worker processes for independent cells")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zpdvr", description="Zeroth-order proximal variance-reduced optimization experiments.")
    subs = parser.add_subparsers(dest="command", required=True)

    p_run = subs.add_parser("run", help="run one configured algorithm (or all) over the configured seeds")
    _add_experiment_args(p_run)
    p_run.add_argument("--algorithm", choices=ALGORITHMS, help="restrict to one algorithm")

    p_cmp = subs.add_parser("compare", help="run every configured algorithm at the same budget")
    _add_experiment_args(p_cmp)

    p_grid = subs.add_parser("gridsearch", help="grid-search hyperparameters per algorithm")
    _add_experiment_args(p_grid)
    p_grid.add_argument("--algorithm", choices=ALGORITHMS, help="restrict to one algorithm")

    p_val = subs.add_parser("validate", help="run Monte-Carlo validator suites")
    p_val.add_argument("suite", nargs="?", default="all", choices=sorted(SUITES) + ["all"])
    p_val.add_argument("--quick", action="store_true", help="fewer draws and seeds")

    p_sum = subs.add_parser("summarize", help="print a table from a run directory")
    p_sum.add_argument("out_dir")
    return parser


def _overrides(args) -> dict:
    return {
        "seed": args.seed,
        "budget": args.budget,
        "budget_unit": args.budget_unit,
        "out_dir": args.out_dir,
        "sample_every": args.sample_every,
        "jobs": args.jobs,
    }


def _report(report) -> int:
    summary = report.summary
    failed = [c for c in summary["cells"] if "error" in c]
    for alg, best in sorted(summary["best"].items()):
        print(f"{alg}: final residual {best['final_residual']} (seed {best['seed']}, params {json.dumps(best['params'], sort_keys=True)})")
    for c in failed:
        print(f"{c['algorithm']} seed {c['seed']}: {c['error']}", file=sys.stderr)
    print(f"wrote {report.summary_path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("run", "compare", "gridsearch"):
            cfg = load_config(args.config, _overrides(args))
            algs = [args.algorithm] if getattr(args, "algorithm", None) else None
            if args.command == "gridsearch":
                return _report(grid_search(cfg, algs))
            return _report(run_experiment(cfg, algs))
        if args.command == "validate":
            results = validate(args.suite, quick=args.quick)
            for r in results:
                print(json.dumps(r.to_dict(), sort_keys=True, default=str))
            return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL
        print(summarize(args.out_dir))
        return EXIT_OK
    except (ConfigError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
