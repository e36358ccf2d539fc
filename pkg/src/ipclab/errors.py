"""Exception types shared across the package."""


class IpclabError(Exception):
    """Base class for all domain errors raised by ipclab."""


class DivergenceError(IpclabError, ArithmeticError):
    """A requested moment is infinite."""


class ConvergenceError(IpclabError):
    """An iterative solver hit its iteration cap."""


class DomainError(IpclabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class RegimeError(IpclabError, ValueError):
    """The tail exponent does not belong to a supported scaling regime."""


class MemoryBudgetError(IpclabError):
    """A data structure grew past its configured size cap."""


class CapExceeded(IpclabError):
    """A simulated tree or forest grew past the vertex cap."""

    def __init__(self, message: str, cap: int):
        super().__init__(message)
        self.cap = cap


class QuadratureError(IpclabError):
    """Numerical integration failed to reach the requested tolerance."""


class EnvelopeError(IpclabError):
    """A thinning envelope did not dominate the target intensity."""


class InsufficientData(IpclabError, ValueError):
    """Too few samples for a statistical test."""


class ConfigError(IpclabError, ValueError):
    """Unknown suite name or malformed configuration."""
