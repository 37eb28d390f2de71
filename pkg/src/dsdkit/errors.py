"""Exception hierarchy shared across dsdkit."""


class DsdError(Exception):
    """Base class for every error raised by dsdkit."""


class DimensionError(DsdError, ValueError):
    """Operand shapes or convolution geometry are incompatible."""


class NumericError(DsdError, ArithmeticError):
    """NaN or non-finite values reached a kernel that cannot handle them."""


class ConfigError(DsdError, ValueError):
    """A configuration violates its invariants."""


class ValidationError(DsdError, ValueError):
    """Weights or tables do not match what the consumer expects."""


class ParseError(DsdError, ValueError):
    """A file on disk does not follow its format contract."""

    def __init__(self, message: str, *, path=None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class DomainError(DsdError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DegenerateInputError(DsdError, ValueError):
    """The input carries no usable signal (e.g. an all-zero confusion matrix)."""
