"""Exception hierarchy shared by the numeric modules and the CLI."""

from __future__ import annotations


class BoxNormError(Exception):
    """Base class for all package errors."""


class ParameterError(BoxNormError, ValueError):
    """Invalid norm, prox, solver or experiment parameters."""


class ScaleError(ParameterError):
    """Problem too large for a test-only oracle."""


class InputError(BoxNormError, ValueError):
    """Invalid input data (non-finite entries, bad indices, bad labels)."""


class ParseError(InputError):
    def __init__(self, message: str, *, line_number: int | None = None) -> None:
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class DataValidationError(InputError):
    """Parsed data outside its declared range."""


class MetricError(BoxNormError, ValueError):
    """A metric cannot be computed (e.g. empty observation set)."""


class NumericError(BoxNormError, ArithmeticError):
    def __init__(self, message: str, *, iteration: int | None = None) -> None:
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class ConsistencyError(BoxNormError, RuntimeError):
    """Two computations that must agree did not."""
