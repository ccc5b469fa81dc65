"""Exception types raised by the multibody engine."""

from __future__ import annotations

from typing import Optional


class ModelError(ValueError):
    """Invalid model file or physically invalid model data."""

    def __init__(self, message: str, location: Optional[str] = None) -> None:
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)


class ConfigurationError(ValueError):
    """Run configuration that cannot be acted on."""


class NumericalError(RuntimeError):
    def __init__(self, message: str, step: Optional[int] = None) -> None:
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


class SingularSystemError(NumericalError):
    """Linear system with a pivot below the singularity threshold."""


class ConvergenceError(NumericalError):
    """Newton iteration failed to reach the residual tolerance."""
