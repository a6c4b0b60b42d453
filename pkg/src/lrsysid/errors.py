"""Exception hierarchy shared across the package."""


class LrsysidError(Exception):
    """Base class for all package errors."""


class NotDefinite(LrsysidError):
    """A matrix expected to be positive definite failed to factorize."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NotInDomain(NotDefinite):
    """Barrier evaluated outside the open semidefinite cone."""


class SingularJacobian(LrsysidError):
    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class NoConvergence(LrsysidError):
    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class InfeasibleEqualities(LrsysidError):
    """The linear equality system A_e theta = b_e has no solution."""


class Infeasible(LrsysidError):
    """Phase one could not find a strictly feasible point."""


class LineSearchFailed(LrsysidError):
    pass


class TimeBudgetExceeded(LrsysidError):
    pass


class DimensionError(LrsysidError, ValueError):
    pass


class MissingStates(LrsysidError, ValueError):
    pass


class OutOfRange(LrsysidError, ValueError):
    pass
