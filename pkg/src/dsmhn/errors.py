"""Exception types shared across the package."""


class DSMHNError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(DSMHNError, ValueError):
    """Array dimensions do not agree."""


class ConfigError(DSMHNError, ValueError):
    """A configuration value is invalid or infeasible."""


class FormatError(DSMHNError, ValueError):
    """A file does not follow its binary layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(DSMHNError, ArithmeticError):
    """A non-finite value appeared during computation."""
