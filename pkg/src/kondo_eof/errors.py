"""Exception types shared across the package."""


class KondoEofError(Exception):
    """Base class for all numerical failures raised by this package."""


class InvalidStateError(KondoEofError):
    """Density matrix violates hermiticity/positivity beyond tolerance."""


class ConvergenceError(KondoEofError):
    """Optimizer exhausted its iteration budget.

    Carries the best value found so callers can decide whether it is
    usable anyway.
    """

    def __init__(self, message, best_value=None):
        super().__init__(message)
        self.best_value = best_value


class NotConvergedError(KondoEofError):
    """Spectrum flow never became stationary within the available shells."""


class TemperatureRangeError(KondoEofError):
    """Temperature incompatible with the chain (all Boltzmann weights underflow)."""


class GridAlignmentError(KondoEofError):
    """Observable tables to be averaged do not share a common grid."""


class AccuracyError(KondoEofError):
    """Quadrature or series evaluation failed its own refinement check."""


class TruncationBudgetError(KondoEofError):
    """Basis truncation lost more trace than the configured budget."""


class SizeError(KondoEofError):
    """Brute-force construction would exceed the explicit-dimension cap."""


class InconsistencyError(KondoEofError):
    """Two redundant computations of the same quantity disagree."""


class InsufficientDataError(KondoEofError):
    """Not enough data points inside the requested window."""


class ThresholdRangeError(KondoEofError):
    """A threshold crossing is not bracketed by the data."""
