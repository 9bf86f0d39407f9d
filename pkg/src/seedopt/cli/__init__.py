"""Command-line surface: run configurations, commands and report writers."""

from .config import ConfigError, RunConfig, from_dict, load
from .main import main

__all__ = ["ConfigError", "RunConfig", "from_dict", "load", "main"]
