"""Custom exception classes for the akpz-lab package."""

from __future__ import annotations

from typing import Any

import click


class AkpzLabError(click.ClickException):
    """Base exception for all akpz-lab errors."""

    exit_code = 1

    def __init__(self, message: str, **details: Any) -> None:
        """Initialize the error with a message and optional diagnostic details."""
        super().__init__(message)
        self.details = details

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-serialisable diagnostic record."""
        return {
            "error": type(self).__name__,
            "message": self.message,
            "details": {key: _jsonable(value) for key, value in self.details.items()},
        }


class ConfigError(AkpzLabError):
    """Raised for configuration-related errors (unknown keys, bad presets)."""

    exit_code = 2


class ValidationError(AkpzLabError):
    """Raised for invalid argument values."""

    exit_code = 2


class NumericalError(AkpzLabError):
    """Base class for numerical failures."""


class DomainError(NumericalError):
    """Raised when a Laurent polynomial is evaluated at z = 0 or w = 0."""


class SingularPointError(NumericalError):
    """Raised when the spectral curve is solved too close to a pole."""


class BranchError(NumericalError):
    """Raised when a complex value leaves the upper half plane or a field breaks branch continuity."""


class OutsidePolygonError(NumericalError):
    """Raised when a slope lies outside the margin-delta liquid region."""


class ConvergenceError(NumericalError):
    """Raised when an iterative solver fails to converge."""


class QuadratureError(NumericalError):
    """Raised when the Ronkin quadrature cannot avoid a zero of P."""


class CurlError(NumericalError):
    """Raised when a slope field is not curl free."""


class CrossingError(NumericalError):
    """Raised when characteristic lines cross before the requested time."""


class CflError(NumericalError):
    """Raised when an explicit time step violates its stability bound."""


def _jsonable(value: Any) -> Any:
    """Coerce numpy scalars, tuples and complex numbers into JSON friendly values."""
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if hasattr(value, "tolist"):
        return _jsonable(value.tolist())
    return value
