"""Exception types shared across the package."""


class GpboError(Exception):
    """Base class for package errors."""


class DomainError(GpboError, ValueError):
    """A point or argument violates a domain constraint (out of bounds, bad shape)."""


class NumericalError(GpboError, ArithmeticError):
    """A numerical routine failed beyond recovery.

    ``details`` carries diagnostics such as the attempted jitter ladder or the
    per-restart optimizer status.
    """

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details


class ResourceError(GpboError, RuntimeError):
    """An operation would exceed a hard resource cap (e.g. dense-solve size)."""


class ConfigError(GpboError, ValueError):
    """An experiment config failed to parse or validate."""
