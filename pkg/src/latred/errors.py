"""Exception hierarchy shared by the solver modules."""


class LatredError(Exception):
    """Base class for all errors raised by latred."""


class LatticeError(LatredError):
    """Invalid lattice geometry, boundary conditions or loading."""


class NonConvergence(LatredError):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class SingularTangent(LatredError):
    """The linearised system could not be factorised."""


class ControlFailure(LatredError):
    """No load factor achieves the prescribed damage increment."""


class SingularKrr(LatredError):
    """The reduced block of the tangent is singular for the current basis."""


class BreakdownNonSPD(LatredError):
    """Conjugate gradient met a non-positive curvature direction."""


class NegligibleCorrection(LatredError):
    """The global correction lies (numerically) inside the current basis."""


class ScenarioError(LatredError):
    """Malformed scenario document."""
