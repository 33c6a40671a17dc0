"""
errors.py — Exception hierarchy. The CLI maps these onto exit codes.
"""
from typing import Any, Dict, Optional


class LabError(Exception):
    """Root of every error raised deliberately by memheat."""
    exit_code: int = 3


class ConfigurationError(LabError, ValueError):
    """Invalid grid, schedule, kernel data or system parameters."""
    exit_code = 2


class UsageError(LabError, ValueError):
    """An operation was called with inputs outside its contract."""
    exit_code = 2


class DomainError(LabError, ValueError):
    """A kernel was evaluated outside its validity interval."""
    exit_code = 2


class InsufficientDataError(LabError, ValueError):
    """Not enough Taylor coefficients for the requested truncation."""
    exit_code = 2


class NumericalError(LabError, ArithmeticError):
    """Singular step matrix or non-finite state during time stepping."""
    exit_code = 3

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics: Dict[str, Any] = diagnostics or {}

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{base} ({details})"
