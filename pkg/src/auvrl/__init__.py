"""Desk-scale reinforcement-learning laboratory for low-level AUV control."""

__version__ = "0.1.0"


class DomainError(ValueError):
    """Raised when a caller violates an operation's preconditions."""


class ConfigError(ValueError):
    """Raised for invalid or unsupported configuration."""


class NumericAbort(RuntimeError):
    """Raised when training produces a non-finite loss."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
