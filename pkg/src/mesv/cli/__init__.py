"""Command-line interface, run configuration and file formats."""

from .config import DEFAULTS, RunConfig
from .main import main

__all__ = ["DEFAULTS", "RunConfig", "main"]
