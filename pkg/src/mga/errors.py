"""Exception types shared across the package."""


class MGAError(Exception):
    """Base class for package errors."""


class DimensionError(MGAError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(MGAError, ValueError):
    """A structural setting (channel ratio, frame count, block count) is invalid."""


class UsageError(MGAError, ValueError):
    """An operation was called with inputs that violate its contract."""


class DataError(MGAError, ValueError):
    """The dataset cannot satisfy a sampling request."""


class FormatError(MGAError, ValueError):
    """A feature file is malformed."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class NumericalError(MGAError, ArithmeticError):
    """A computation produced NaN or Inf."""

    def __init__(self, message: str, op: str = ""):
        super().__init__(message)
        self.op = op


class MissingArtifactError(MGAError, FileNotFoundError):
    """A run directory lacks a file an operation needs."""
