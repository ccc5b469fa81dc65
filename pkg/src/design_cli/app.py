from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from multibody.errors import ConfigurationError, ModelError, NumericalError

from . import handlers, utils

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_NUMERICAL = 4

_COMMANDS: Dict[str, Callable[[handlers.RunConfig], int]] = {
    "simulate": handlers.run_simulate,
    "sensitivity": handlers.run_sensitivity,
    "optimize": handlers.run_optimize,
    "validate": handlers.run_validate,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="Main.py",
        description="Simulate flexible multibody models, differentiate and optimize their designs.",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--model", required=True, type=Path, help="model file (JSON)")
    parser.add_argument("--out", default=Path("out"), type=Path, help="output directory")
    parser.add_argument(
        "--method",
        default=handlers.METHOD_CHOICES[0],
        choices=handlers.METHOD_CHOICES,
        help="sensitivity method",
    )
    parser.add_argument("--h", type=float, default=None, help="time step override [s]")
    parser.add_argument("--T", type=float, default=None, help="duration override [s]")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        env = utils.load_environment()
        log_path = utils.setup_logging(args.command, env)
        logger.info("Logging to %s", log_path)
        cfg = handlers.RunConfig(
            command=args.command,
            model_path=args.model,
            out_dir=args.out,
            method=args.method,
            h=args.h,
            T=args.T,
            fd_workers=env.fd_workers,
        )
        return _COMMANDS[args.command](cfg)
    except FileNotFoundError as exc:
        return _fail(EXIT_INPUT, exc)
    except ModelError as exc:
        return _fail(EXIT_INPUT, exc)
    except ConfigurationError as exc:
        return _fail(EXIT_CONFIG, exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, exc)


def _fail(status: int, exc: Exception) -> int:
    logger.error("%s", exc)
    sys.stderr.write(f"error: {exc}\n")
    return status
