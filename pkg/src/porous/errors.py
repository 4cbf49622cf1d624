"""Exception hierarchy shared by the solver modules."""


class PorousError(Exception):
    """Base class for all errors raised by :mod:`porous`."""


class ConfigError(PorousError, ValueError):
    """Malformed configuration, coefficient specification or scenario."""


class MeshError(PorousError, ValueError):
    """Invalid mesh topology, geometry or file contents."""


class DegenerateCoefficientError(PorousError, ValueError):
    """A transport coefficient is not strictly positive at some node."""


class QuadratureError(PorousError, ArithmeticError):
    """Adaptive quadrature did not reach its tolerance before the depth cap."""


class LinearSolverError(PorousError, ArithmeticError):
    """Krylov breakdown, NaN contamination or a singular dense system."""


class NewtonError(PorousError, ArithmeticError):
    """The nonlinear moisture solve failed to converge."""


class StepFailure(PorousError):
    """A time step failed; carries the step index of the failure."""

    def __init__(self, step, reason):
        super().__init__(f"step {step} failed: {reason}")
        self.step = step
        self.reason = reason
