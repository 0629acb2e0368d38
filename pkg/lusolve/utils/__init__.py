"""Utility functions and constants."""

from lusolve.utils.logger import setup_logging
from lusolve.utils.version import get_version

__all__ = [
    "setup_logging",
    "get_version",
]
