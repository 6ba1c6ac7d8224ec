"""Dropout interaction-effect laboratory: exact functional ANOVA, distillation
effect sizes, and Monte Carlo verifiers for the dropout scaling theorems."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__ as _core_doc

__all__ = [name for name in dir() if not name.startswith("_")]
