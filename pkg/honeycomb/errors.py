"""Exception hierarchy shared by the numerics modules and the CLI.

Every error carries the process exit code the CLI reports for it.
"""

from typing import Optional


class HoneycombError(Exception):
    """Base class for all library errors"""

    exit_code = 1


class InvalidArgumentError(HoneycombError, ValueError):
    """A precondition on an argument was violated"""

    exit_code = 2


class ConfigError(InvalidArgumentError):
    """Run configuration failed schema validation"""


class SingularEvaluationError(InvalidArgumentError):
    """Evaluation point sits on a singularity of the kernel"""


class ResolutionError(InvalidArgumentError):
    """Sampling grid is too coarse for the requested field"""


class DegenerateInputError(InvalidArgumentError):
    """Input lies exactly on a degeneracy (e.g. beta = 0 at the cone tip)"""


class ConvergenceError(HoneycombError, RuntimeError):
    """A truncated sum or quadrature missed its tolerance"""

    exit_code = 3

    def __init__(self, message: str, achieved: Optional[float] = None):
        super().__init__(message)
        self.achieved = achieved


class SolverError(ConvergenceError):
    """Dense Nystrom system is singular or too ill-conditioned"""

    def __init__(self, message: str, condition: Optional[float] = None):
        super().__init__(message, achieved=None)
        self.condition = condition


class ConeWindowError(ConvergenceError):
    """Cone fit residual too large: radii lie outside the linear window"""


class InvariantViolation(HoneycombError, RuntimeError):
    """A structural identity failed beyond tolerance"""

    exit_code = 4


class InconsistencyError(InvariantViolation):
    """Computed object violates its own structure (under-resolved quadrature)"""


class DegenerateConeError(InvariantViolation):
    """Dirac coefficient c vanishes to noise level"""
