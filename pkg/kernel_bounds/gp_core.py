"""
Multi-output GP posterior under the surrogate noise covariance K^w_sigma.

The Gram matrix K_hat = C^T K C + K^w_sigma is never inverted directly. With a square
factor F F^T = C^T K C and the noise precision P = (K^w_sigma)^-1,

    K_hat^-1 = P - P F S^-1 F^T P,    S = I + F^T P F,

which stays well defined when some sigma_j reach the cap and P loses rank.
"""

import dataclasses
import functools

import numpy as np
import scipy.linalg as la

from .exceptions import InfeasibleProblemError
from .kernels import KernelSpec, as_points, eval_kernel, projected_cross, projected_gram
from .linalg import jitter_cholesky, psd_factor, symmetrize
from .noise_model import SIGMA_CAP, NoiseModel


@dataclasses.dataclass(frozen=True, eq=False)
class Problem:
    """Training data, kernel, noise bounds and RKHS-norm budget gamma_f."""

    inputs: np.ndarray
    measurements: np.ndarray
    y: np.ndarray
    kernel: KernelSpec
    noise: NoiseModel
    gamma_f: float

    def __post_init__(self):
        if not isinstance(self.kernel, KernelSpec):
            raise ValueError("Expected a KernelSpec, got {}.".format(type(self.kernel).__name__))
        if not isinstance(self.noise, NoiseModel):
            raise ValueError("Expected a NoiseModel, got {}.".format(type(self.noise).__name__))
        inputs = as_points(self.inputs, getattr(self.kernel, "input_dim", None))
        n_f = self.kernel.output_dim
        measurements = np.asarray(self.measurements, dtype=float).reshape(-1, n_f)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if not (inputs.shape[0] == measurements.shape[0] == y.shape[0]):
            raise ValueError("Got {} inputs, {} measurement vectors and {} observations.".format(
                inputs.shape[0], measurements.shape[0], y.shape[0]))
        if self.noise.n != y.shape[0]:
            raise ValueError("Noise model covers {} measurements, data has {}.".format(self.noise.n, y.shape[0]))
        if not self.gamma_f > 0:
            raise ValueError("RKHS-norm budget must be positive, got {}.".format(self.gamma_f))
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "measurements", measurements)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "gamma_f", float(self.gamma_f))

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def output_dim(self):
        return self.kernel.output_dim

    @functools.cached_property
    def training_gram(self):
        """C^T K_{1:N,1:N} C."""
        return symmetrize(projected_gram(self.kernel, self.inputs, self.measurements))

    @functools.cached_property
    def training_factor(self):
        return psd_factor(self.training_gram, name="Projected training Gram matrix")

    def check_point(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.ndim != 1:
            raise ValueError("Test point must be a vector, got shape {}.".format(x.shape))
        if self.n > 0 and x.shape[0] != self.inputs.shape[1]:
            raise ValueError("Test point has dimension {}, inputs have {}.".format(x.shape[0], self.inputs.shape[1]))
        return x

    def cross_covariance(self, x):
        """K_{x,1:N} C, shape (n_f, N)."""
        x = self.check_point(x)
        if self.n == 0:
            return np.zeros((self.output_dim, 0))
        return projected_cross(self.kernel, x, self.inputs, self.measurements)

    def prior_covariance(self, x):
        x = self.check_point(x)
        return eval_kernel(self.kernel, x, x)

    def prior_bound(self, x, h):
        h = np.asarray(h, dtype=float).reshape(-1)
        return self.gamma_f * np.sqrt(max(h @ self.prior_covariance(x) @ h, 0.0))


@dataclasses.dataclass(frozen=True, eq=False)
class PosteriorFactorization:
    problem: Problem
    sigma: np.ndarray
    active: np.ndarray
    P: np.ndarray
    S_cholesky: np.ndarray
    alpha: np.ndarray
    y_norm2: float
    budget: float

    @property
    def F(self):
        return self.problem.training_factor

    @property
    def radicand(self):
        return self.budget - self.y_norm2

    def solve(self, b):
        """K_hat^-1 b."""
        if self.problem.n == 0:
            return np.zeros_like(b, dtype=float)
        Pb = self.P @ b
        t = la.cho_solve((self.S_cholesky, True), self.F.T @ Pb)
        return Pb - self.P @ (self.F @ t)

    def noise_map(self, b):
        """K^w_sigma K_hat^-1 b = b - F S^-1 F^T P b."""
        if self.problem.n == 0:
            return np.asarray(b, dtype=float)
        t = la.cho_solve((self.S_cholesky, True), self.F.T @ (self.P @ b))
        return b - self.F @ t

    @property
    def noise_residual(self):
        """Noise estimate K^w_sigma K_hat^-1 y of the minimum-norm data fit."""
        return self.noise_map(self.problem.y)

    def predict(self, cross, prior):
        """Posterior mean and covariance from K_{x,1:N} C and k(x, x)."""
        if self.problem.n == 0:
            return np.zeros(prior.shape[0]), symmetrize(prior)
        mu = cross @ self.alpha
        cov = prior - cross @ self.solve(cross.T)
        return mu, symmetrize(cov)


def factorize(problem, sigma, cap=SIGMA_CAP):
    noise = problem.noise
    sigma = noise.check_sigma(sigma)
    active = noise.active(sigma, cap)
    inverse_sq = np.where(active, sigma ** -2.0, 0.0)
    budget = problem.gamma_f ** 2 + float(np.sum(noise.gammas ** 2 * inverse_sq))

    N = problem.n
    if N == 0:
        return PosteriorFactorization(problem=problem, sigma=sigma, active=active, P=np.zeros((0, 0)),
                                      S_cholesky=np.zeros((0, 0)), alpha=np.zeros(0), y_norm2=0.0,
                                      budget=budget)

    P = noise.weighted_precision(inverse_sq)
    F = problem.training_factor
    S = np.eye(F.shape[1]) + symmetrize(F.T @ P @ F)
    L, _ = jitter_cholesky(S)

    Py = P @ problem.y
    alpha = Py - P @ (F @ la.cho_solve((L, True), F.T @ Py))
    y_norm2 = max(float(problem.y @ alpha), 0.0)
    return PosteriorFactorization(problem=problem, sigma=sigma, active=active, P=P, S_cholesky=L,
                                  alpha=alpha, y_norm2=y_norm2, budget=budget)


def posterior(fact, x):
    problem = fact.problem
    return fact.predict(problem.cross_covariance(x), problem.prior_covariance(x))


def beta_sigma(fact, problem=None):
    if problem is not None and problem is not fact.problem:
        raise ValueError("Factorization belongs to a different problem.")
    radicand = fact.radicand
    if radicand < 0:
        raise InfeasibleProblemError(
            "Data falsify the norm and noise bounds: beta radicand {:.6g} < 0.".format(radicand),
            radicand=radicand, sigma=fact.sigma)
    return float(np.sqrt(radicand))
