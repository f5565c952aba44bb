"""Decompose round-by-round competition scores into skill, course effects and luck."""

__version__ = "0.1.0"

from .errors import SkillDecompError  # noqa: E402

__all__ = ["SkillDecompError", "__version__"]
