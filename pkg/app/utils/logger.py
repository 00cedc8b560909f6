"""Logging utilities for the rbm-replica toolkit."""
from __future__ import annotations

import logging
from logging.handlers import RotatingFileHandler

from app.config import SETTINGS, ensure_data_dir

_LOG_FORMAT = (
    "%(asctime)s | %(levelname)s | %(name)s | %(message)s"
)

_CONFIGURED = False


def configure_logging() -> None:
    """Configure toolkit-wide logging once per process."""

    global _CONFIGURED
    if _CONFIGURED:
        return
    logging.basicConfig(level=SETTINGS.log_level.upper(), format=_LOG_FORMAT)
    if SETTINGS.log_to_file:
        ensure_data_dir()
        log_dir = SETTINGS.data_dir / "logs"
        log_dir.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(
            log_dir / "rbm.log", maxBytes=2_000_000, backupCount=2
        )
        file_handler.setFormatter(logging.Formatter(_LOG_FORMAT))
        logging.getLogger().addHandler(file_handler)
    _CONFIGURED = True


def get_logger(name: str) -> logging.Logger:
    configure_logging()
    return logging.getLogger(name)
