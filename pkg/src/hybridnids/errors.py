"""Exception types shared across the package."""


class HybridNIDSError(Exception):
    """Base class for all package errors."""


class DataError(HybridNIDSError, ValueError):
    """Input data violates a documented precondition."""


class FlowParseError(DataError):
    """A flow CSV line could not be parsed."""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class SchemaMismatchError(DataError):
    """Artifacts were produced under different feature schemas."""


class TrainingError(HybridNIDSError, RuntimeError):
    """Model training diverged."""
