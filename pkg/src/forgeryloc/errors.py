"""Exception hierarchy shared by every module."""


class ForgeryLocError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(ForgeryLocError, ValueError):
    """An argument violates an operation's precondition."""


class ConfigurationError(ForgeryLocError, ValueError):
    """Inconsistent configuration (ablation flags, stage datasets, missing checkpoint)."""


class GenerationError(ForgeryLocError, RuntimeError):
    """Synthetic data generation could not satisfy its constraints."""


class EncoderError(ForgeryLocError, RuntimeError):
    """The external video encoder is missing or failed.

    ``diagnostics`` holds the command line and captured stderr when available.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class UndefinedMetricError(ForgeryLocError, ValueError):
    """A metric is undefined for the given inputs (e.g. AP with one class)."""
