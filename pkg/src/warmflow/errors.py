"""Exception types shared across the package."""


class WarmflowError(Exception):
    """Base class for all warmflow errors."""


class ConfigurationError(WarmflowError, ValueError):
    """Bad shapes, inconsistent dimensions, or invalid configuration."""


class NumericError(WarmflowError, ArithmeticError):
    """A NaN/Inf was produced. Carries the layer or integration step it
    first appeared at, when known."""

    def __init__(self, message: str, *, layer: int | None = None, step: int | None = None):
        super().__init__(message)
        self.layer = layer
        self.step = step


class UsageError(WarmflowError):
    """CLI-level misuse (bad arguments, missing files)."""
