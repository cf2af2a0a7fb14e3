"""Command-line entry point: ``pdmp-mdp <command> --config C --variant V --seed N --outdir D``."""

from __future__ import annotations

import argparse
import sys

from .errors import ValidationError
from .experiment import COMMANDS, load_config, run_experiment
from .medical import VARIANTS

EXIT_OK = 0
EXIT_INVALID = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdmp-mdp", description="Seeded experiments on the medical follow-up models.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON file with optional 'model' and 'run' sections")
        p.add_argument("--variant", required=True, help=f"one of {', '.join(VARIANTS)}")
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--outdir", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        summary = run_experiment(
            {
                "command": args.command,
                "variant": args.variant,
                "seed": args.seed,
                "outdir": args.outdir,
                "config": load_config(args.config),
            }
        )
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"{args.command} {args.variant}: wrote {', '.join(summary['files'] + ['summary.json'])} to {args.outdir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
