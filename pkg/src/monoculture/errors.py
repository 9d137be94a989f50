"""Exception hierarchy.

Everything the CLI maps to exit code 1 derives from ``ValidationError``;
everything mapped to exit code 2 derives from ``NumericalError``.
"""


class MonocultureError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(MonocultureError, ValueError):
    pass


class ParseError(ValidationError):
    pass


class CompletenessError(ValidationError):
    """Raised when an (item, model) grid is not dense."""


class DomainError(ValidationError):
    pass


class UnsupportedError(ValidationError):
    pass


class NumericalError(MonocultureError, ArithmeticError):
    pass


class ConditioningError(NumericalError):
    pass


class DegenerateModelError(NumericalError):
    """A model has zero residual variance, so its correlations are undefined."""

    def __init__(self, model_id, message=None):
        self.model_id = model_id
        super().__init__(message or f"model {model_id!r} has zero residual variance")


class UndefinedStatisticError(NumericalError):
    pass
