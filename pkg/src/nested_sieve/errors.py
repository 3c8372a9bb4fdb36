"""Exception types shared across the package."""


class NestedSieveError(Exception):
    """Base class for all package errors."""


class ConfigError(NestedSieveError, ValueError):
    """Invalid parameters or a malformed experiment configuration."""


class DomainError(NestedSieveError, ValueError):
    """Argument outside the mathematical domain of a function."""


class CapExceededError(NestedSieveError, RuntimeError):
    """A simulation would exceed the configured size cap."""


class StreamExhausted(NestedSieveError):
    """The residual mass of a probability stream underflowed."""


class FactorizationError(NestedSieveError, ArithmeticError):
    """A covariance matrix could not be factorized."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition
