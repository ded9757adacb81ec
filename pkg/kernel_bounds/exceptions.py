import numpy as np


class NotPositiveSemidefiniteError(ValueError):
    """A kernel or noise matrix violates its positive-semidefiniteness tolerance."""


class InfeasibleProblemError(ValueError):
    """The data falsify the RKHS-norm and noise assumptions jointly.

    Raised whenever the radicand of the scaling factor becomes negative. Since the
    relaxed constraint is implied by the original ones, a negative radicand at any
    noise parameter proves the original problem infeasible.
    """

    def __init__(self, message, radicand=None, sigma=None):
        super().__init__(message)
        self.radicand = radicand
        self.sigma = sigma


class SingularNoiseCovarianceError(np.linalg.LinAlgError):
    pass


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


class BoundaryConditionError(ArithmeticError):
    """Gradient requested where the scaling factor vanishes."""


class NonConvergenceError(RuntimeError):

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class SamplerError(RuntimeError):

    def __init__(self, message, constraint_index=None, margin=None):
        super().__init__(message)
        self.constraint_index = constraint_index
        self.margin = margin
