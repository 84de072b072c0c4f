"""Exception and warning types raised across the package."""


class SteinDiffError(Exception):
    """Base class for all package errors."""


class DomainError(SteinDiffError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class ConstructionError(SteinDiffError, ValueError):
    """An object could not be built from the supplied parameters."""


class CenteringError(ConstructionError):
    """The drift does not integrate to zero against the target density."""


class SingularityError(SteinDiffError, ArithmeticError):
    """A coefficient vanished where the computation divides by it."""


class BoundaryError(DomainError):
    """A point sits on the support boundary where the operation degenerates."""


class HypothesisError(SteinDiffError, ValueError):
    """A model fails the hypotheses needed for a requested norm constant."""


class SupportViolation(SteinDiffError, ValueError):
    """A sampled value fell outside the support of the target law."""


class IntegrationBlowup(SteinDiffError, FloatingPointError):
    """A simulated path produced a non-finite state."""


class UnsupportedMode(SteinDiffError, ValueError):
    """The requested combination of inputs is not supported."""


class ResolutionWarning(UserWarning):
    """Too few samples per bin; bins were merged."""
