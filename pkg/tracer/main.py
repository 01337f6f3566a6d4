"""Main entry point for Vessel Tracer."""

import argparse
import logging
import sys
from typing import Optional, Sequence

from PIL import UnidentifiedImageError

from config.settings import LOG_LEVEL
from tracer.commands import (
    UsageError,
    cache_command,
    eval_command,
    fit_embeddings_command,
    synth_command,
    trace_command,
)
from tracer.errors import (
    ConfigurationError,
    EmptyInputError,
    GenerationError,
    InvalidArgumentError,
    InvalidSeedError,
    InvalidTargetError,
    ParseError,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

DATA_ERRORS = (
    ParseError,
    InvalidArgumentError,
    InvalidSeedError,
    InvalidTargetError,
    ConfigurationError,
    GenerationError,
    EmptyInputError,
    FileNotFoundError,
    IsADirectoryError,
    UnidentifiedImageError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vessel-tracer", description="Retinal vessel tree tracing")
    parser.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    parser.add_argument("--log-level", default=None, help=f"logging level (default {LOG_LEVEL})")
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="generate a synthetic scene")
    synth.add_argument("--spec", required=True, help="scene spec JSON")
    synth.add_argument("--out", required=True, help="output directory")
    synth.set_defaults(handler=synth_command)

    trace = commands.add_parser("trace", help="trace seeded vessel trees")
    trace.add_argument("--image", required=True)
    trace.add_argument("--semantic", required=True, help="binary vessel mask PNG")
    trace.add_argument("--seeds", required=True, help="seed file JSON")
    trace.add_argument("--embedder", choices=("oracle", "external"), default="oracle")
    trace.add_argument("--truth", help="directory of <id>_mask.png for the oracle embedder")
    trace.add_argument("--endpoint", help="external embedder: http(s)://... or cmd:<command>")
    trace.add_argument("--cache", action="store_true", help="cache external embedder replies")
    trace.add_argument("--config", help="key = value run configuration")
    trace.add_argument("--jobs", type=int, default=None, help="trees traced in parallel")
    trace.add_argument("--out", required=True, help="output directory")
    trace.set_defaults(handler=trace_command)

    evaluate = commands.add_parser("eval", help="score predicted instances")
    evaluate.add_argument("--pred", required=True, help="directory of <id>_mask.png")
    evaluate.add_argument("--truth", required=True, help="directory of <id>_mask.png")
    evaluate.add_argument("--smooth", type=float, default=1.0)
    evaluate.add_argument("--out", required=True, help="report JSON path")
    evaluate.set_defaults(handler=eval_command)

    fit = commands.add_parser("fit-embeddings", help="fit free embeddings to a label map")
    fit.add_argument("--labels", required=True, help="instance label PNG")
    fit.add_argument("--config", help="key = value run configuration")
    fit.add_argument("--out", required=True, help="output directory")
    fit.set_defaults(handler=fit_embeddings_command)

    cache = commands.add_parser("cache", help="inspect or clear the embedder reply cache")
    cache.add_argument("--stats", action="store_true", help="print cache statistics as JSON")
    cache.add_argument("--clear", choices=("all", "expired"), help="remove cached replies")
    cache.set_defaults(handler=cache_command)
    return parser


def _configure_logging(level_name: Optional[str]) -> None:
    level = getattr(logging, (level_name or LOG_LEVEL).upper(), None)
    if not isinstance(level, int):
        raise UsageError(f"Unknown log level {level_name!r}")
    logging.basicConfig(
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        level=level,
    )
    logging.getLogger().setLevel(level)


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args.log_level)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE

    try:
        return args.handler(args)
    except UsageError as e:
        logger.error(f"Usage error: {e}")
        return EXIT_USAGE
    except DATA_ERRORS as e:
        logger.error(f"Data error: {e}")
        return EXIT_DATA
    except Exception as e:
        logger.error(f"Runtime error in {args.command}: {e}", exc_info=True)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
