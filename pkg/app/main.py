"""Command-line entry point."""
from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from app.commands import batch, simulation, theory
from app.commands.common import EXIT_CONFIG, EXIT_FAILED
from app.config import ConfigParseError, ensure_data_dir
from app.services.model_core import DivergedTrajectory, ModelError, NonFiniteUpdate
from app.utils.logger import get_logger

LOGGER = get_logger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rbm-replica", description="Teacher-student RBM saddle points, stability and simulations"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    theory.register(subparsers)
    simulation.register(subparsers)
    batch.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    ensure_data_dir()
    try:
        return args.handler(args)
    except ConfigParseError as exc:
        LOGGER.error("Configuration error: %s", exc)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteUpdate, DivergedTrajectory) as exc:
        LOGGER.error("Run diverged: %s", exc)
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except ModelError as exc:
        LOGGER.error("Invalid model configuration: %s", exc)
        for _, message in exc.violations or [("", str(exc))]:
            print(f"invalid configuration: {message}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
