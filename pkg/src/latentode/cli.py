"""Command-line front end: ``latentode {check,simulate,intervene,estimate,reproduce}``.

Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
numerical failures.
"""
from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .runner import NumericalFailure, emit_results, run_task

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _u64(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return value


def build_parser():
    parser = _Parser(prog="latentode", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="task", required=True, parser_class=_Parser)
    for task in ("check", "simulate", "intervene", "estimate", "reproduce"):
        p = sub.add_parser(task, help=f"run the '{task}' task of a config")
        p.add_argument("--config", required=True,
                       help="YAML config path or the name of a bundled fixture")
        p.add_argument("--out", default="results", help="output directory (default: results)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--seed", type=_u64, default=None, help="override the RNG seed")
        p.add_argument("--reps", type=_positive_int, default=None,
                       help="override the replication count")
        p.add_argument("--tol", type=_positive_float, default=None,
                       help="absolute rank tolerance for condition checks")
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, reps=args.reps, tol=args.tol)
        record = run_task(cfg, args.task)
        paths = emit_results(record, args.out, args.format)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"cannot write results: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
