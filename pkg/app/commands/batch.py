"""Handlers for grid sweeps and the validation suite."""
from __future__ import annotations

import argparse
from typing import Any, Dict

from app.commands.common import (
    EXIT_FAILED,
    EXIT_OK,
    add_common_arguments,
    add_model_arguments,
    output_path,
    resolve,
    write_outputs,
)
from app.config import SETTINGS, ConfigParseError
from app.services.sweeps import any_failing, grid_points, parse_grid, point_seed, run_grid
from app.services.validation import run_validation_suite

SWEEP_DEFAULTS: Dict[str, Any] = {"grid": None, "nishimori": False, "solver": "full", "workers": None}
VALIDATE_DEFAULTS: Dict[str, Any] = {"level": "fast"}


def handle_sweep(args: argparse.Namespace) -> int:
    resolved = resolve(args, "sweep", SWEEP_DEFAULTS)
    if not resolved.get("grid"):
        raise ConfigParseError("sweep needs a grid, for example --grid alpha=0:3:60,T=0.1:1.2:60")
    points = grid_points(parse_grid(str(resolved["grid"]), str(resolved.get("solver") or "full")))
    workers = int(resolved.get("workers") or SETTINGS.workers)
    master_seed = int(resolved["seed"])
    records = run_grid(points, resolved, master_seed, workers)
    seeds = [point_seed(master_seed, index) for index in range(len(points))]
    path = write_outputs("sweep", records, output_path(args, "sweep"), resolved, seeds)
    print(f"{len(records)} grid points written to {path}")
    return EXIT_FAILED if any_failing(records) else EXIT_OK


def handle_validate(args: argparse.Namespace) -> int:
    resolved = resolve(args, "validate", VALIDATE_DEFAULTS)
    report = run_validation_suite(resolved["level"], int(resolved["seed"]))
    write_outputs("validate", report.to_frame().to_dict("records"), output_path(args, "validate"), resolved)
    print(report.to_text())
    return EXIT_OK if report.passed else EXIT_FAILED


def register(subparsers: argparse._SubParsersAction) -> None:
    sweep_parser = subparsers.add_parser("sweep", help="solve on a parameter grid")
    add_common_arguments(sweep_parser)
    add_model_arguments(sweep_parser)
    sweep_parser.add_argument("--grid", default=None, help="axes such as alpha=0:3:60,T=0.1:1.2:60")
    sweep_parser.add_argument("--nishimori", action="store_true", default=None, help="tie beta_star to beta")
    sweep_parser.add_argument("--solver", choices=("full", "reduced"), default=None)
    sweep_parser.add_argument("--workers", type=int, default=None)
    sweep_parser.add_argument("--n-gaussian-samples", type=int, default=None)
    sweep_parser.add_argument("--max-iters", type=int, default=None)
    sweep_parser.set_defaults(handler=handle_sweep)

    validate_parser = subparsers.add_parser("validate", help="run the cross-validation suite")
    add_common_arguments(validate_parser)
    validate_parser.add_argument("--level", choices=("fast", "full"), default=None)
    validate_parser.set_defaults(handler=handle_validate)
