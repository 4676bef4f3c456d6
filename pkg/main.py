"""
Dynamic transfer optimization - command-line entry point.

Runs seeded benchmark sweeps of DETO and its baselines on moving-peaks
problems, reports summaries and statistics from the run records, emits
plot tables and inspects benchmark instances.

Exit codes: 0 on success, 1 when any run of a sweep failed, 2 on invalid
input or configuration.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from core.benchmarks import PeakShape, Severity, dump_state, load_state, mpb_eval, make_problem, true_optimum
from core.errors import OptimizationError
from harness.experiment import run_experiment
from harness.reporting import (
    PLOT_KINDS,
    STATISTICS_COLUMNS,
    SUMMARY_COLUMNS,
    emit_plot_data,
    format_table,
    load_results,
    statistics_rows,
    summary_rows,
)
from harness.settings import get_config_path, load_config

logger = logging.getLogger("main")

EXIT_OK = 0
EXIT_FAILED_RUNS = 1
EXIT_BAD_INPUT = 2


def setup_logging(verbose: bool = False, quiet: bool = False):
    """Configure the root logger once for the whole process."""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    result = run_experiment(config, output_dir=args.output, workers=args.workers)
    if result.failures:
        logger.error("%d of %d runs failed", len(result.failures), len(result.outcomes))
        return EXIT_FAILED_RUNS
    logger.info("all %d runs finished; results in %s", len(result.outcomes), result.directory)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    results = load_results(args.results_dir)
    print(format_table(SUMMARY_COLUMNS, summary_rows(results)))
    print(format_table(STATISTICS_COLUMNS, statistics_rows(results)), end="")
    return EXIT_FAILED_RUNS if results.failures else EXIT_OK


def cmd_plotdata(args: argparse.Namespace) -> int:
    path = emit_plot_data(args.results_dir, args.kind)
    print(path)
    return EXIT_OK


def cmd_bench_dump(args: argparse.Namespace) -> int:
    problem = make_problem(
        args.n,
        args.m,
        PeakShape(args.shape),
        Severity(height=args.height, shift=args.shift, width=args.width),
        np.random.default_rng(args.seed),
    )
    for _ in range(args.advances):
        problem.advance()
    print(dump_state(problem.state), end="")
    return EXIT_OK


def _parse_point(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_bench_eval(args: argparse.Namespace) -> int:
    state = load_state(Path(args.dump))
    x_star, f_star = true_optimum(state)
    print("point,value")
    for point in args.points:
        print(f"{','.join(repr(float(v)) for v in point)},{mpb_eval(state, point)!r}")
    if args.optimum:
        print(f"{','.join(repr(float(v)) for v in x_star)},{f_star!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Dynamic transfer optimization experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run an experiment sweep")
    run.add_argument("config", nargs="?", default=None, help=f"configuration file (default: {get_config_path()})")
    run.add_argument("--output", default=None, help="results directory (overrides the configuration)")
    run.add_argument("--workers", type=int, default=None, help="worker processes")
    run.set_defaults(handler=cmd_run)

    report = commands.add_parser("report", help="print summary and statistics tables")
    report.add_argument("results_dir")
    report.set_defaults(handler=cmd_report)

    plotdata = commands.add_parser("plotdata", help="write a plot table")
    plotdata.add_argument("results_dir")
    plotdata.add_argument("--kind", choices=PLOT_KINDS, required=True)
    plotdata.set_defaults(handler=cmd_plotdata)

    bench = commands.add_parser("bench", help="inspect benchmark instances")
    bench_commands = bench.add_subparsers(dest="bench_command", required=True)

    dump = bench_commands.add_parser("dump", help="print an instance in the text dump format")
    dump.add_argument("--n", type=int, default=3)
    dump.add_argument("--m", type=int, default=5)
    dump.add_argument("--shape", choices=[s.value for s in PeakShape], default=PeakShape.CONE.value)
    dump.add_argument("--height", type=float, default=1.0, help="height severity")
    dump.add_argument("--shift", type=float, default=1.0, help="shift severity")
    dump.add_argument("--width", type=float, default=0.5, help="width severity")
    dump.add_argument("--seed", type=int, default=0)
    dump.add_argument("--advances", type=int, default=0, help="environment changes applied before dumping")
    dump.set_defaults(handler=cmd_bench_dump)

    evaluate = bench_commands.add_parser("eval", help="evaluate points on a dumped instance")
    evaluate.add_argument("dump", help="file written by 'bench dump'")
    evaluate.add_argument("points", nargs="*", type=_parse_point, help="points as comma-separated coordinates")
    evaluate.add_argument("--optimum", action="store_true", help="also print the true optimum")
    evaluate.set_defaults(handler=cmd_bench_eval)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose, args.quiet)
    try:
        return args.handler(args)
    except OptimizationError as e:
        logger.error("%s", e)
        return EXIT_BAD_INPUT
    except OSError as e:
        logger.error("%s", e)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
