"""Command-line entry point.

Verbs: simulate, optimize, reference, sweep-mu, iteration-study,
validate-config. A run configuration file is required; --out, --seed,
--objectives and --flasks override the corresponding config fields.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import commands
from .config import ConfigError, FLASK_COUNTS, OBJECTIVE_MODES, load

VERBS = ("simulate", "optimize", "reference", "sweep-mu", "iteration-study",
         "validate-config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seedopt",
        description="Seed-train design optimization: simulate cultivation "
                    "trains under uncertainty and search Pareto-optimal "
                    "shake-flask filling volumes.",
    )
    parser.add_argument("verb", choices=VERBS)
    parser.add_argument("--config", required=True, help="run configuration YAML")
    parser.add_argument("--out", default=None, help="output directory "
                        "(default: output_dir from the config)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--objectives", choices=OBJECTIVE_MODES, default=None,
                        help="override the objective count")
    parser.add_argument("--flasks", type=int, choices=FLASK_COUNTS, default=None,
                        help="override the number of shake-flask scales")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load(args.config)
        if args.seed is not None:
            config.seed = args.seed
        if args.objectives is not None:
            config.objectives = args.objectives
        if args.flasks is not None:
            config.flasks = args.flasks
        if args.out is not None:
            config.output_dir = args.out
        config.validate()

        out_dir = Path(config.output_dir)
        if args.verb == "validate-config":
            print(f"ok: {args.config}")
            return 0
        if args.verb == "simulate":
            written = commands.cmd_simulate(config, out_dir)
        elif args.verb == "reference":
            written = commands.cmd_reference(config, out_dir)
        elif args.verb == "optimize":
            written, _ = commands.cmd_optimize(config, out_dir)
        elif args.verb == "sweep-mu":
            written = commands.cmd_sweep_mu(config, out_dir)
        else:
            written = commands.cmd_iteration_study(config, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # partial artifacts stay on disk
        print(f"error: {exc}", file=sys.stderr)
        return 1

    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
