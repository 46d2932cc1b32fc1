"""
Custom exceptions for the fluctuation lab.
"""
from typing import Optional, Sequence


class FluctLabError(Exception):
    """Base exception for fluctuation lab errors."""
    pass


class SpecValidationError(FluctLabError):
    """Raised when a domain object violates its invariants."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class NumericFailureError(FluctLabError):
    """Raised when quadrature or root finding misses its tolerance."""

    def __init__(self, message: str, achieved_error: float = float("nan"), tolerance: float = float("nan")):
        super().__init__(message)
        self.achieved_error = achieved_error
        self.tolerance = tolerance


class RefinementNeededError(NumericFailureError):
    """Raised when the scale function marching step is too coarse."""

    def __init__(self, message: str, step: float, estimated_error: float, tolerance: float = float("nan")):
        super().__init__(message, achieved_error=estimated_error, tolerance=tolerance)
        self.step = step
        self.estimated_error = estimated_error


class UnsupportedMeasureError(FluctLabError):
    """Raised when sampling needs a finite-mass measure and gets an infinite one."""

    def __init__(self, message: str, total_mass: float = float("inf")):
        super().__init__(message)
        self.total_mass = total_mass


class PrecisionFailureError(FluctLabError):
    """Raised when too few usable samples are available for the requested precision."""

    def __init__(self, message: str, achieved_se: float = float("nan"), required: float = float("nan")):
        super().__init__(message)
        self.achieved_se = achieved_se
        self.required = required


class HorizonTooShortError(FluctLabError):
    """Raised when censoring exceeds its limit or a rescale horizon is insufficient."""

    def __init__(self, message: str, censored_fraction: float = float("nan"), limit: float = float("nan")):
        super().__init__(message)
        self.censored_fraction = censored_fraction
        self.limit = limit


class UsageError(FluctLabError):
    """Raised on invalid configuration or an incompatible metric/law pairing."""
    pass


class UnsupportedFamilyError(UsageError, NotImplementedError):
    """Raised when a preset or analytic family is not registered."""

    def __init__(self, message: str, registered: Sequence[str] = ()):
        super().__init__(f"{message} (registered: {', '.join(registered)})" if registered else message)
        self.registered = tuple(registered)
