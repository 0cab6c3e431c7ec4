"""Exception hierarchy shared by every module of the package."""


class GoalPhsError(Exception):
    """Base class for all errors raised by goalphs."""


class ContractError(GoalPhsError, ValueError):
    """A precondition of an operation was violated (shapes, call order)."""


class NumericInputError(GoalPhsError, ValueError):
    """An input contained NaN or Inf entries."""


class ConfigError(GoalPhsError, ValueError):
    """A configuration value is out of its admissible range."""

    def __init__(self, message, fields=None):
        super().__init__(message)
        self.fields = list(fields or [])


class FormatError(GoalPhsError, ValueError):
    """A binary file does not follow the expected layout."""


class ConsistencyError(GoalPhsError, ValueError):
    """Two inputs that must agree do not (e.g. image and label counts)."""


class DivergenceError(GoalPhsError, ArithmeticError):
    """A run produced a non-finite loss. ``record`` holds the partial history."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record
