"""Exception types shared across the package."""


class RpceError(Exception):
    """Base class for all package errors."""


class ConfigError(RpceError, ValueError):
    """Invalid configuration or input document."""


class NumericalError(RpceError, ArithmeticError):
    """A numerical procedure failed (factorization, non-finite values)."""


class SingularDenominatorError(NumericalError):
    """A rational surrogate's denominator vanished at an evaluation point."""


class VacuousModelError(NumericalError):
    """All numerator basis functions were pruned during training."""


class TmcmcError(NumericalError):
    """Transitional MCMC did not reach the target within the stage budget."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class FormatError(RpceError, ValueError):
    """Malformed persisted document; the message carries the field path."""
