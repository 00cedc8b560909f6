"""Application configuration helpers."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional


class ConfigParseError(ValueError):
    """Raised when a run configuration cannot be read or resolved."""


@dataclass(frozen=True)
class Settings:
    """Container for environment-driven configuration."""

    data_dir: Path = Path(os.getenv("RBM_DATA_DIR", "data"))
    output_subdir: str = os.getenv("RBM_OUTPUT_SUBDIR", "runs")
    workers: int = int(os.getenv("RBM_WORKERS", "1"))
    master_seed: int = int(os.getenv("RBM_SEED", "0"))
    log_to_file: bool = os.getenv("RBM_LOG_TO_FILE", "false").lower() == "true"
    log_level: str = os.getenv("RBM_LOG_LEVEL", "INFO")
    output_override: Optional[str] = field(default=os.getenv("RBM_OUTPUT_DIR"))

    @property
    def output_dir(self) -> Path:
        if self.output_override:
            return Path(self.output_override)
        return self.data_dir / self.output_subdir


SETTINGS = Settings()

SECTIONS = (
    "common",
    "solve",
    "reduced",
    "stability",
    "free-entropy",
    "simulate",
    "lottery",
    "sweep",
    "validate",
)


def ensure_data_dir(path: Path | None = None) -> Path:
    """Ensure the data directory exists and return it."""

    base = path or SETTINGS.data_dir
    base.mkdir(parents=True, exist_ok=True)
    return base


def load_json(path: Path) -> Dict[str, Any]:
    """Load JSON data from disk."""

    with path.open("r", encoding="utf-8") as handle:
        return json.load(handle)


def save_json(path: Path, payload: Dict[str, Any]) -> None:
    """Persist JSON payload to disk."""

    ensure_data_dir(path.parent)
    tmp_path = path.with_suffix(".tmp")
    with tmp_path.open("w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, default=str)
    tmp_path.replace(path)


def _normalize_keys(section: Mapping[str, Any]) -> Dict[str, Any]:
    return {str(key).replace("-", "_"): value for key, value in section.items()}


def resolve_run_config(
    command: str,
    defaults: Mapping[str, Any],
    config_path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> Dict[str, Any]:
    """Merge defaults, the config file sections and CLI overrides.

    Later sources win: defaults < "common" < command section < overrides.
    Overrides whose value is ``None`` were not given on the command line.
    """

    resolved: Dict[str, Any] = dict(defaults)
    if config_path is not None:
        try:
            payload = load_json(Path(config_path))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigParseError(f"Cannot read run config {config_path}: {exc}") from exc
        if not isinstance(payload, dict):
            raise ConfigParseError(f"Run config {config_path} must be a JSON object")
        unknown = [name for name in payload if name not in SECTIONS]
        if unknown:
            raise ConfigParseError(f"Unknown config sections {unknown}")
        for name in ("common", command):
            section = payload.get(name, {})
            if not isinstance(section, dict):
                raise ConfigParseError(f"Config section '{name}' must be an object")
            resolved.update(_normalize_keys(section))
    for key, value in _normalize_keys(overrides or {}).items():
        if value is not None:
            resolved[key] = value
    return resolved
