# src/core/errors.py
from __future__ import annotations


class RDPError(Exception):
    """Base class for every error raised by the workbench."""


class ValidationError(RDPError, ValueError):
    """Malformed table, mismatched shapes, out-of-range symbols or bad input files."""


class InfeasibleProblemError(RDPError):
    """No channel satisfies the requested distortion / perception constraints."""


class ConvergenceError(RDPError):
    """Raised only when a caller explicitly requires convergence."""


class BudgetExceededError(RDPError):
    """An exact enumeration would exceed its configured budget."""


class EncodingFailure(RDPError):
    """Every codeword assigns the observed source block likelihood zero."""
