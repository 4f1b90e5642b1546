"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract, so library code should raise
the most specific class that applies.
"""


class ElemStructError(Exception):
    """Base class for all package errors."""


class DimensionError(ElemStructError, ValueError):
    """Shapes or dimensionalities do not agree."""


class EmptyInputError(ElemStructError, ValueError):
    """An operation received an empty point set or batch."""


class UnsupportedOperationError(ElemStructError):
    """The requested operation is not defined for this module kind."""


class ConfigError(ElemStructError, ValueError):
    """Invalid or unknown configuration."""


class DataError(ElemStructError):
    """A dataset record, file, or manifest is missing or malformed."""


class FormatError(DataError, ValueError):
    """A geometry file could not be parsed."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class NumericalError(ElemStructError, ArithmeticError):
    """Non-finite values appeared during training or evaluation."""
