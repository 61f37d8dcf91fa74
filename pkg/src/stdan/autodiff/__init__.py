"""Reverse-mode differentiation over a recorded tape, plus finite-difference checks."""

from . import ops
from .fd import GradReport, fd_gradient, relative_error
from .tape import Scope, Tape, TapeError, Var

__all__ = ["GradReport", "Scope", "Tape", "TapeError", "Var", "fd_gradient", "ops", "relative_error"]
