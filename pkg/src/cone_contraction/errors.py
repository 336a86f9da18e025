"""Exception hierarchy shared by every module of the package."""


class ConeError(Exception):
    """Base class for all errors raised by cone_contraction."""


class DimensionError(ConeError, ValueError):
    """Operands have incompatible shapes."""


class NotSymmetricError(ConeError, ValueError):
    """A matrix is further from symmetric than the accepted tolerance."""


class NotPositiveDefiniteError(ConeError, ValueError):
    """A matrix expected in the open cone is not positive definite."""


class InfeasibleError(ConeError):
    """The point lies outside the domain where the vector field is defined.

    For the generalized Riccati field this means ``R + D'PD`` is not
    positive definite.
    """


class HypothesisError(ConeError):
    """A hypothesis required by a rate formula or solver does not hold."""

    def __init__(self, message, failed=None):
        super().__init__(message)
        self.failed = list(failed or [])


class IntegrationError(ConeError):
    """The flow could not be continued up to the requested time."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory

    @property
    def exit_time(self):
        if self.trajectory is None:
            return None
        return self.trajectory.exit_time


class ConvergenceError(ConeError):
    """An iterative solver ran out of budget before reaching tolerance."""
