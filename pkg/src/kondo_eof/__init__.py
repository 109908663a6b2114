"""Entanglement-of-formation bounds for Kondo impurity models.

Builds Wilson chains, runs iterative diagonalization, assembles full
thermal density matrices in block form, optionally traces out the bath
beyond a distance L, and certifies lower/upper bounds on the impurity-bath
entanglement of formation with two-qubit witness operators.
"""

__version__ = "0.1.0"

from .errors import (
    AccuracyError,
    ConvergenceError,
    GridAlignmentError,
    InconsistencyError,
    InsufficientDataError,
    InvalidStateError,
    KondoEofError,
    NotConvergedError,
    SizeError,
    TemperatureRangeError,
    ThresholdRangeError,
    TruncationBudgetError,
)

__all__ = [
    "__version__",
    "KondoEofError",
    "InvalidStateError",
    "ConvergenceError",
    "NotConvergedError",
    "TemperatureRangeError",
    "GridAlignmentError",
    "AccuracyError",
    "TruncationBudgetError",
    "SizeError",
    "InconsistencyError",
    "InsufficientDataError",
    "ThresholdRangeError",
]
