"""Exception types raised across the package.

Each class maps onto one CLI exit code (see :mod:`dppl.cli`).
"""


class DpplError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(DpplError, ValueError):
    """An argument violates a documented precondition."""


class InstanceTooLargeError(DpplError):
    """Exhaustive routines refuse inputs above their size guard."""


class NonConvergenceError(DpplError):
    """An iterative routine stopped at its iteration cap."""


class InfeasibleSubproblemError(DpplError):
    """The GP trust region admits no strictly feasible point."""


class NumericalDegeneracyError(DpplError):
    """A projection or factorisation lost all numerical rank."""


class PsdViolationError(DpplError, ValueError):
    """A kernel has eigenvalues too negative to be rounding noise."""


class FeatureScalingError(DpplError, OverflowError):
    """A quality exponent left the representable range."""


class DegenerateLabelError(DpplError):
    """A training label has zero probability under the model."""


class EmptyTrainingSetError(DpplError, ValueError):
    """A routine that needs training data received none."""
