"""
QFractal command-line entry point.

Subcommands:
- build-state: coefficient file and state summary
- carpet: density over (x, t)
- trajectories: Bohmian ensembles and truncation-ladder limits
- profile: density, phase and quantum potential profiles
- energy: particle energies along trajectories and ensemble energy against N
- fractal: length-scaling and spectrum fractal dimensions

Exit codes: 0 success, 2 usage error, 3 numerical failure.
"""
from typing import List, Optional
import argparse
import logging
import sys

from pydantic import ValidationError

from app import __version__
from app.api.commands import COMMANDS
from app.core.config import settings
from app.core.errors import (
    ConfigError,
    DomainError,
    FitError,
    IntegrationStalledError,
    NodeSingularityError,
    TruncationRangeError,
)
from app.schemas.run_config import load_run_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration (run.json accepted)")
    common.add_argument("--out", help="Output directory (default: config output_dir or OUTPUT_DIR)")
    common.add_argument("--threads", type=int, default=None, help="Worker count (default: THREADS)")
    common.add_argument("--log-level", default=None, help="Logging level (default: LOG_LEVEL)")

    parser = argparse.ArgumentParser(
        prog="qfractal",
        description="Bohmian trajectories and fractal dimensions of quantum-fractal states in a box",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, handler in COMMANDS.items():
        summary = (handler.__doc__ or "").strip().splitlines()[0]
        subparsers.add_parser(name, parents=[common], help=summary, description=summary)
    return parser


def configure_logging(level_name: Optional[str]) -> None:
    level = getattr(logging, (level_name or settings.LOG_LEVEL).upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    threads = args.threads if args.threads is not None else settings.THREADS

    try:
        config = load_run_config(args.config)
        result = COMMANDS[args.command](config, args.out, threads)
        logger.info(f"{result.command} wrote {len(result.files)} files to {result.out_dir}")
        return EXIT_OK

    except (ConfigError, DomainError, ValidationError) as e:
        logger.error(f"Usage error: {e}")
        return EXIT_USAGE

    except (IntegrationStalledError, NodeSingularityError, FitError, TruncationRangeError) as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL

    except Exception as e:
        logger.error(f"Unhandled exception: {e}", exc_info=True)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
