"""Command line interface.

Subcommands: ``train --config <path>``, ``compare --config-dir <dir>
--seeds <n>``, ``verify --suite <name>``, ``plot --out <svg> <csv...>``.

Exit codes: 0 success, 1 usage error, 2 config/input error, 3 diverged
run, 4 verify failure.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys

from .compare import compare
from .config import ConfigError, load_config
from .datasets import CsvFormatError
from .plotting import MetricsCsvError, plot_metrics
from .training import train
from .verify import SUITES, run_suite

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_VERIFY = 4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; the interface contract
    # reserves 2 for config errors, so usage problems are re-raised.
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="adafish", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training experiment")
    p_train.add_argument("--config", required=True, help="JSON experiment config")

    p_compare = sub.add_parser("compare", help="paired optimizer comparison over seeds")
    p_compare.add_argument("--config-dir", required=True, help="directory of JSON configs")
    p_compare.add_argument("--seeds", type=int, default=5, help="number of seeds (0..n-1)")
    p_compare.add_argument("--out-dir", default="compare_out", help="artifact directory")

    p_verify = sub.add_parser("verify", help="run the identity/oracle check suite")
    p_verify.add_argument("--suite", default="all", choices=SUITES)
    p_verify.add_argument("--corrupt-smw", action="store_true", help=argparse.SUPPRESS)

    p_plot = sub.add_parser("plot", help="plot metrics CSVs into one SVG")
    p_plot.add_argument("--out", required=True, help="output SVG path")
    p_plot.add_argument("csvs", nargs="+", help="metrics CSV files")
    return parser


def _cmd_train(args) -> int:
    config = load_config(args.config)
    result = train(config)
    print(f"status: {result.status}")
    print(f"metrics: {result.csv_path}")
    if result.checkpoint_path:
        print(f"checkpoint: {result.checkpoint_path}")
    print(f"final train loss: {result.final_train_loss:.6e}")
    return EXIT_DIVERGED if result.status == "diverged" else EXIT_OK


def _cmd_compare(args) -> int:
    paths = sorted(glob.glob(os.path.join(args.config_dir, "*.json")))
    if not paths:
        raise ConfigError(f"no *.json configs in {args.config_dir}")
    if args.seeds < 1:
        raise _UsageError("--seeds must be >= 1")
    configs = [load_config(p) for p in paths]
    labels = [os.path.splitext(os.path.basename(p))[0] for p in paths]
    stats, summary = compare(configs, labels, list(range(args.seeds)), args.out_dir)
    diverged = [s for s in stats if s.status != "ok"]
    print(summary.table())
    print(f"comparison CSV: {os.path.join(args.out_dir, 'comparison.csv')}")
    if diverged:
        print(f"diverged runs: {[(s.label, s.seed) for s in diverged]}")
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_verify(args) -> int:
    results, ok = run_suite(args.suite, corrupt_smw=args.corrupt_smw)
    for result in results:
        print(result.line())
    print(f"verify suite={args.suite}: {'all passed' if ok else 'FAILURES present'}")
    return EXIT_OK if ok else EXIT_VERIFY


def _cmd_plot(args) -> int:
    plot_metrics(args.csvs, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "verify":
            return _cmd_verify(args)
        return _cmd_plot(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CsvFormatError, MetricsCsvError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def console_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
