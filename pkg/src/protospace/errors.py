"""Exception hierarchy shared by every module."""


class ProtospaceError(Exception):
    """Base class for all toolkit errors."""


class InputError(ProtospaceError, ValueError):
    pass


class DimensionError(ProtospaceError, ValueError):
    pass


class DegenerateVectorError(ProtospaceError, ValueError):
    pass


class NumericalError(ProtospaceError, ArithmeticError):
    pass


class InsufficientDataError(ProtospaceError, ValueError):
    pass


class ParseError(ProtospaceError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(ProtospaceError, ValueError):
    pass


class ServiceError(ProtospaceError):
    pass


class ProtocolError(ProtospaceError):
    pass


class ConfigError(ProtospaceError, ValueError):
    pass


class MissingEmbeddingError(ProtospaceError, LookupError):
    pass


class EmptyPairSetError(ProtospaceError, ValueError):
    pass


class DegenerateInputError(ProtospaceError, ValueError):
    pass


class EmptyJoinError(ProtospaceError, ValueError):
    pass


class AuditError(ProtospaceError, AssertionError):
    """Evaluation data leaked into a training set."""
