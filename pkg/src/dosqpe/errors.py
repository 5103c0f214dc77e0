"""Exception types shared across the package."""


class DosQpeError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(DosQpeError, ValueError):
    pass


class ResourceLimitError(DosQpeError):
    """A desk-scale size guard was exceeded."""


class FormatError(DosQpeError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(DosQpeError, ValueError):
    pass


class PreconditionError(DosQpeError):
    pass


class NumericalError(DosQpeError, ArithmeticError):
    pass
