"""Command line entry point: ``isgd run|analyze|gencfg``."""
import argparse
import logging
import sys

from .analysis import variance_report
from .config import DEFAULT_CONFIG, parse_config
from .errors import ConfigError
from .experiment import collect_runs, run_experiment, write_summary


def _run(args):
    spec = parse_config(args.config)
    if args.output_dir:
        spec.output_dir = args.output_dir
    status, written = run_experiment(spec)
    for path in written:
        print(path)
    return status


def _analyze(args):
    groups = collect_runs(args.directory)
    if not groups:
        print(f"no run_*.csv files in {args.directory}", file=sys.stderr)
        return 1
    report = variance_report(groups, args.window, args.threshold)
    print(f"{'label':<28} {'runs':>4} {'loss':>12} {'loss_std':>12} {'var_trace':>12} {'iters<=thr':>10}")
    for row in report.rows:
        its = "-" if row.iters_to_threshold_median is None else f"{row.iters_to_threshold_median:g}"
        print(f"{row.label:<28} {row.runs:>4} {row.loss_mean:>12.5g} {row.loss_std:>12.5g} "
              f"{row.var_trace_mean:>12.5g} {its:>10}")
    if args.write:
        write_summary(report, f"{args.directory}/summary.csv")
    return 0


def _gencfg(args):
    if args.output:
        with open(args.output, "w") as f:
            f.write(DEFAULT_CONFIG)
    else:
        sys.stdout.write(DEFAULT_CONFIG)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="isgd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train every (cell, seed) of a config")
    p.add_argument("config")
    p.add_argument("--output-dir", help="overrides the config and $ISGD_OUTPUT_DIR")
    p.set_defaults(func=_run)

    p = sub.add_parser("analyze", help="summarize run CSVs in a directory")
    p.add_argument("directory")
    p.add_argument("--window", type=int, default=50)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--write", action="store_true", help="also write summary.csv")
    p.set_defaults(func=_analyze)

    p = sub.add_parser("gencfg", help="print a commented default config")
    p.add_argument("-o", "--output")
    p.set_defaults(func=_gencfg)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
