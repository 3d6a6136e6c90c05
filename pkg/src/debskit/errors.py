"""Exception types shared across the package."""


class DebskitError(Exception):
    """Base class for all library errors."""


class ValidationError(DebskitError, ValueError):
    """Bad argument, shape mismatch or violated invariant."""


class FormatError(DebskitError):
    """A file exists but its content cannot be decoded."""


class OracleTimeout(DebskitError, TimeoutError):
    """The external classifier did not answer in time."""
