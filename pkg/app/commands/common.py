"""Shared argument and output helpers for command handlers."""
from __future__ import annotations

import argparse
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence

from app.config import SETTINGS, resolve_run_config
from app.services.model_core import CheckedConfiguration, Hyperparameters, validate
from app.services.sweeps import covariance_for, emit_csv, write_manifest

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAILED = 2

MODEL_DEFAULTS: Dict[str, Any] = {
    "beta_star": 1.0,
    "beta": 1.0,
    "alpha": 1.0,
    "p_star": 1,
    "p": 1,
    "c": None,
    "student_prior": "binary",
    "teacher_prior": "binary",
}

# Flags that only steer the command line and never reach a config section.
_NON_CONFIG_FLAGS = ("command", "handler", "config", "output")


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="JSON run configuration")
    parser.add_argument("--output", type=Path, default=None, help="CSV output path")
    parser.add_argument("--seed", type=int, default=None)


def add_model_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--beta-star", type=float, default=None)
    parser.add_argument("--beta", type=float, default=None)
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--p-star", type=int, default=None)
    parser.add_argument("--p", type=int, default=None)
    parser.add_argument("--c", type=float, default=None, help="uniform teacher-pattern correlation")
    parser.add_argument("--student-prior", choices=("binary", "gaussian"), default=None)
    parser.add_argument("--teacher-prior", choices=("binary", "gaussian"), default=None)


def resolve(args: argparse.Namespace, command: str, defaults: Mapping[str, Any]) -> Dict[str, Any]:
    overrides = {key: value for key, value in vars(args).items() if key not in _NON_CONFIG_FLAGS}
    resolved = resolve_run_config(command, {**MODEL_DEFAULTS, **defaults}, args.config, overrides)
    if resolved.get("seed") is None:
        resolved["seed"] = SETTINGS.master_seed
    return resolved


def checked_model(resolved: Mapping[str, Any]) -> CheckedConfiguration:
    h = Hyperparameters.from_dict(dict(resolved))
    return validate(h, covariance_for(resolved, {}, h.p_star))


def output_path(args: argparse.Namespace, command: str, suffix: str = "") -> Path:
    if args.output is not None:
        path = Path(args.output)
        return path.with_name(f"{path.stem}{suffix}{path.suffix}") if suffix else path
    return SETTINGS.output_dir / f"{command}{suffix}.csv"


def write_outputs(
    command: str,
    records: Sequence[Mapping[str, Any]],
    path: Path,
    resolved: Mapping[str, Any],
    seeds: Optional[Sequence[int]] = None,
) -> Path:
    emit_csv(records, path)
    write_manifest(path.with_suffix(".manifest.json"), command, resolved, seeds or [int(resolved["seed"])])
    return path


def print_record(record: Mapping[str, Any]) -> None:
    for key, value in record.items():
        print(f"{key}={value:.12g}" if isinstance(value, float) else f"{key}={value}")
