"""Exception hierarchy. The CLI maps each family onto an exit code."""


class QmetaError(Exception):
    """Base class for all errors raised by qmeta."""


class ConfigError(QmetaError, ValueError):
    """Invalid configuration or parameter values (exit code 2)."""


class NumericalError(QmetaError, ArithmeticError):
    """Singular systems, failed fits, unresolvable spectra (exit code 3)."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DataIOError(QmetaError, OSError):
    """Unreadable or malformed data files (exit code 4)."""
