"""Exception hierarchy; the CLI maps these onto exit codes."""


class LidarHsiError(Exception):
    """Base class for errors raised by the toolkit."""


class DataError(LidarHsiError, ValueError):
    """Malformed, missing or inconsistent input data."""


class NumericError(LidarHsiError, ArithmeticError):
    """A numerical procedure failed or hit a degenerate configuration."""
