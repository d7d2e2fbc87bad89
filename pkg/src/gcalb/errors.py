"""Exception types shared across the package."""


class GCALBError(Exception):
    """Base class for errors raised by this package."""


class ConstructionError(GCALBError):
    """A numerical construction (filter, penalty, basis) failed validation."""


class ConvergenceError(GCALBError):
    """An iterative solver exhausted its budget.

    Carries the best available iterate/report so callers can inspect or
    salvage partial results.
    """

    def __init__(self, message, *, best=None, report=None):
        super().__init__(message)
        self.best = best
        self.report = report


class FilterApplicationError(ConvergenceError):
    """A resolvent solve inside a rational-filter application failed."""

    def __init__(self, message, *, pole_index, best=None, report=None):
        super().__init__(message, best=best, report=report)
        self.pole_index = pole_index


class UnsupportedFeatureError(GCALBError):
    """A requested combination of options is outside the supported envelope."""
