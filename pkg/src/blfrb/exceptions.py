"""Exception hierarchy shared by all modules."""


class BLFRBError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(BLFRBError, ValueError):
    """Invalid or infeasible run configuration (bag sizes, tunings, ...)."""


class SingularDesignError(BLFRBError, ValueError):
    """A weighted Gram matrix or elemental subset is numerically singular."""


class DegenerateScaleError(BLFRBError, ArithmeticError):
    """The M-scale equation has no positive root (too many zero residuals)."""


class ConvergenceError(BLFRBError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    ``last_iterate`` holds the final state and ``residual`` the size of the
    violation at that state.
    """

    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class InsufficientReplicasError(BLFRBError, ValueError):
    pass


class ResultsFormatError(BLFRBError, ValueError):
    """A results file is malformed or written by an incompatible schema version."""


class DataFormatError(BLFRBError, ValueError):
    """Delimited input could not be parsed; message names the row and column."""
