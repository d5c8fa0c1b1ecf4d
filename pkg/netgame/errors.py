"""Exception hierarchy. Each class carries the CLI exit code it maps to."""
from __future__ import annotations

from typing import Any, Dict, Optional


class NetgameError(Exception):
    exit_code: int = 3

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}


class ConfigError(NetgameError):
    """Malformed or unreadable configuration / spec file."""
    exit_code = 1


class DomainError(NetgameError):
    """A numeric argument outside its documented range (h <= 0, horizon not a multiple of h, ...)."""
    exit_code = 1


class SpecValidationError(NetgameError):
    """The game data violates a structural or modelling assumption."""
    exit_code = 2

    def __init__(self, message: str, report: Any = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, details)
        self.report = report


class SolverError(NetgameError):
    exit_code = 3


class NumericError(SolverError):
    pass


class RiccatiError(SolverError):
    pass


class WellPosednessError(SolverError):
    pass


class SteadyStateDivergenceError(SolverError):
    """Raised when the covariance operator has spectral radius >= 1."""

    def __init__(self, rho: float, message: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            message
            or f"unbounded steady-state covariance: scheduling too infrequent for error dynamics (rho={rho:.6g})",
            details,
        )
        self.rho = rho


class ConvergenceError(NetgameError):
    exit_code = 4
