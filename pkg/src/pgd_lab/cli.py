"""``pgd-lab`` command line entry point.

Exit codes: 0 success, 1 runtime error, 2 configuration error,
3 failed audit or inequality check.
"""

from __future__ import annotations

import argparse
import sys

from .config import load_experiment
from .errors import ConfigurationError, PGDLabError
from .parallel import default_workers

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2, 3

COMMANDS = ("run", "scan", "flow", "check-inequalities", "bound-audit")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"pgd-lab: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _u64(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser():
    parser = _Parser(prog="pgd-lab", description="Particle gradient descent experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment TOML file")
        p.add_argument("--out", default=".", help="output directory (default: .)")
        p.add_argument("--seed", type=_u64, default=None)
        p.add_argument("--replicates", type=_positive, default=None)
        p.add_argument("--workers", type=_positive, default=None,
                       help="worker count; PGD_LAB_WORKERS overrides")
        if name == "scan":
            p.add_argument("--axis", choices=["h", "n", "k", "m"], default=None)
            p.add_argument("--grid", type=float, nargs="+", default=None)
        if name == "check-inequalities":
            p.add_argument("--sweep-size", type=_positive, default=None)
    return parser


def dispatch(args):
    from . import experiments

    spec = load_experiment(args.config, seed=args.seed, replicates=args.replicates,
                           workers=default_workers(args.workers), out_dir=args.out)
    if args.command == "run":
        return experiments.cmd_run(spec)
    if args.command == "scan":
        return experiments.cmd_scan(spec, args.axis, args.grid)
    if args.command == "flow":
        return experiments.cmd_flow(spec)
    if args.command == "check-inequalities":
        return experiments.cmd_check_inequalities(spec, args.sweep_size)
    return experiments.cmd_bound_audit(spec)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        result = dispatch(args)
    except ConfigurationError as exc:
        print(f"pgd-lab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PGDLabError as exc:
        print(f"pgd-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"pgd-lab: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(result.summary)
    print(f"wrote {result.csv_path}" + (f" and {result.svg_path}" if result.svg_path else ""))
    return EXIT_OK if result.passed else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
