"""Exception types raised across the package."""


class InvalidArgument(ValueError):
    pass


class FormatError(ValueError):
    """Malformed trajectory or config file."""


class DataError(ValueError):
    """File parses but carries unusable values (NaN, inf)."""


class RangeError(IndexError):
    pass


class ConfigError(ValueError):
    """Invalid experiment configuration.

    ``line`` is the 1-based line in the source document when known.
    """

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line

    def __str__(self):
        msg = super().__str__()
        return f"line {self.line}: {msg}" if self.line is not None else msg


class NumericalError(ArithmeticError):
    pass


class LoadOverflowError(OverflowError):
    """Payload too large for the link in one slot (2^x would overflow)."""


class DegenerateError(ValueError):
    """Input collapses a statistic (all-identical samples, all-zero weights)."""


class StateError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


class QueryError(LookupError):
    """A request names data that does not exist (dimension, trace, window)."""
