"""Exception types raised across the package."""


class PatError(Exception):
    """Base class for all package errors."""


class DegenerateVector(PatError, ValueError):
    """A vector whose norm is at or below the norm floor reached a cosine kernel."""


class ShapeMismatch(PatError, ValueError):
    pass


class InvalidSchema(PatError, ValueError):
    pass


class MissingLabel(PatError, ValueError):
    pass


class InvalidLabel(PatError, ValueError):
    pass


class InvalidConfig(PatError, ValueError):
    pass


class EmptyDataset(PatError, ValueError):
    pass


class NonFiniteLoss(PatError, FloatingPointError):
    """Training produced a NaN/Inf loss. ``dump`` carries the offending step's diagnostics."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


class ParseError(PatError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaMismatch(PatError, ValueError):
    pass


class VersionMismatch(PatError, ValueError):
    pass
