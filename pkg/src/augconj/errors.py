"""Exception hierarchy shared across the package."""


class AugconjError(Exception):
    """Base class for all errors raised by augconj."""


class ConstraintError(AugconjError, ValueError):
    """A parameter violates its constraint (e.g. a non-positive scale)."""


class DomainError(AugconjError, ValueError):
    """An input lies outside the operation's domain."""


class NumericalError(AugconjError, RuntimeError):
    """A numerical routine failed (factorization, overflow, quadrature)."""


class SamplingError(AugconjError, RuntimeError):
    """Random-variate generation failed to converge."""
