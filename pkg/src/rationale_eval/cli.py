"""Command-line entry point: ``rationale-eval <stage> --config run.toml``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from .config import load_run_config
from .errors import ConfigError, RationaleEvalError
from .pipeline import STAGES, run_stages

logger = logging.getLogger("rationale_eval")

EXIT_OK = 0
EXIT_IO = 3  # unreadable input or unwritable output is reported as a data error
COMMANDS = STAGES + ("all",)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML run configuration")
    parser.add_argument("--out", help="output directory (overrides run.out)")
    parser.add_argument("--judges", help="comma-separated judge ids whose scores are used downstream")
    parser.add_argument("--attribute", action="append", default=None,
                        help="restrict attribute leaderboards (repeatable)")
    parser.add_argument("--seed", type=int, help="seed for training, background sampling and ELO")
    parser.add_argument("--offline", action="store_true", default=None,
                        help="never call a judge endpoint; a cache miss is an error")
    parser.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rationale-eval",
        description="Score rationales with judge panels, explain human preference, rank models per attribute.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "all" else "run every stage in order")
        _common(p)
    run = sub.add_parser("run", help="run the stage named by --stage")
    _common(run)
    run.add_argument("--stage", required=True, choices=COMMANDS)
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logger.handlers[:] = [handler]
    logger.setLevel(level)
    logger.propagate = False


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return ConfigError.exit_code
    _configure_logging(args.verbose)
    command = args.stage if args.command == "run" else args.command
    try:
        config = load_run_config(
            args.config, out=args.out, seed=args.seed, offline=args.offline, attributes=args.attribute,
            judges=[j.strip() for j in args.judges.split(",") if j.strip()] if args.judges else None)
        stages = list(STAGES) if command == "all" else [command]
        results = run_stages(config, stages)
    except RationaleEvalError as exc:
        print(f"rationale-eval: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"rationale-eval: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for r in results:
        extra = f" ({r.network_calls} network calls, {r.cache_hits} cache hits)" if r.network_calls or r.cache_hits else ""
        print(f"{r.stage}: {len(r.outputs)} output file(s){extra}")
    print(f"outputs in {config.out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
