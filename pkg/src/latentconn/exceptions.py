"""Exception hierarchy. CLI maps ValidationError to exit 2, NumericalError to exit 3."""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class ShapeError(ValidationError):
    """Array dimensions do not match what the operation expects."""


class DegenerateSeriesError(ValidationError):
    """A series has zero variance, so its correlation is undefined."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class InsufficientDataError(ValidationError):
    """Too few usable observations for the requested statistic."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite or out-of-range values."""


class CheckpointError(ValidationError):
    """A checkpoint file could not be parsed."""
