"""Exception types shared across the package."""


class EpicError(Exception):
    """Base class for errors raised by epicrl."""


class DimensionError(EpicError, ValueError):
    pass


class DomainError(EpicError, ValueError):
    pass


class NumericError(EpicError, ArithmeticError):
    pass


class ConfigError(EpicError, ValueError):
    """Invalid configuration. ``line`` is set when the error maps to a config line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ProtocolError(EpicError, RuntimeError):
    pass


class UnsupportedError(EpicError, NotImplementedError):
    pass


class InsufficientDataError(EpicError, ValueError):
    pass
