"""Command-line front end for the multibody design engine."""

from .app import main

__all__ = ["main"]
