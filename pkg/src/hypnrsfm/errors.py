"""Exception hierarchy shared by every module."""


class NRSfMError(Exception):
    """Base class for all package errors."""


class UsageError(NRSfMError, ValueError):
    """A call violated its documented preconditions."""


class DimensionError(UsageError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(UsageError):
    """A configuration value violates an invariant."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class NumericError(NRSfMError, ArithmeticError):
    """A value became non-finite."""


class DegeneracyError(NRSfMError, ValueError):
    """Shapes are rank deficient where full rank is required."""


class ParseError(NRSfMError, ValueError):
    """A text file could not be parsed."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SchemaError(ParseError):
    """A file parsed but its content is inconsistent."""


class MetricUnavailableError(NRSfMError, ValueError):
    """A metric was requested without the data it needs."""
