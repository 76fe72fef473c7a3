"""Exception hierarchy shared across the package."""


class QsgldError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(QsgldError, ValueError):
    """Vector operands have incompatible shapes."""


class UsageError(QsgldError, ValueError):
    """An argument violates a documented precondition."""


class RangeError(QsgldError, OverflowError):
    """A value cannot be represented on the requested grid."""


class NumericalError(QsgldError, ArithmeticError):
    """NaN or Inf appeared where a finite value is required."""


class FormatError(QsgldError, ValueError):
    """A data file does not follow its declared binary format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(QsgldError, ValueError):
    """An experiment configuration is malformed."""


class DataError(QsgldError, ValueError):
    """Dataset contents violate their declared shape or label range."""
