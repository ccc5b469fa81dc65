from __future__ import annotations

import json
import logging
import os
import sys
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Mapping

from dotenv import load_dotenv

from multibody.errors import ConfigurationError

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


@dataclass(frozen=True)
class RunEnvironment:
    log_dir: Path
    log_level: str
    fd_workers: int


def load_environment() -> RunEnvironment:
    load_dotenv()
    log_dir = os.getenv("MBS_LOG_DIR") or "logs"
    log_level = (os.getenv("MBS_LOG_LEVEL") or "INFO").upper()
    if log_level not in LOG_LEVELS:
        raise ConfigurationError(
            f"MBS_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}, got {log_level!r}."
        )
    workers_raw = os.getenv("MBS_FD_WORKERS") or "1"
    try:
        fd_workers = int(workers_raw)
    except ValueError as exc:
        raise ConfigurationError("MBS_FD_WORKERS must be an integer.") from exc
    if fd_workers < 1:
        raise ConfigurationError("MBS_FD_WORKERS must be at least 1.")
    return RunEnvironment(log_dir=Path(log_dir), log_level=log_level, fd_workers=fd_workers)


def setup_logging(command: str, env: RunEnvironment) -> Path:
    """Route log records to stderr and to logs/<command>-YYYYMMDD-HHMMSS.log."""
    env.log_dir.mkdir(parents=True, exist_ok=True)
    timestamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    log_path = env.log_dir / f"{command}-{timestamp}.log"
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_design_cli", False):
            root.removeHandler(handler)
            handler.close()
    formatter = logging.Formatter(LOG_FORMAT)
    stream = logging.StreamHandler(sys.stderr)
    file_handler = logging.FileHandler(log_path, encoding="utf-8")
    for handler in (stream, file_handler):
        handler.setFormatter(formatter)
        handler._design_cli = True
        root.addHandler(handler)
    root.setLevel(env.log_level)
    return log_path


def write_json(path: Path, data: Mapping[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_suffix(".tmp")
    temp_path.write_text(json.dumps(data, indent=2, sort_keys=True), encoding="utf-8")
    temp_path.replace(path)
    return path


def write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_suffix(".tmp")
    temp_path.write_text(text, encoding="utf-8")
    temp_path.replace(path)
    return path
