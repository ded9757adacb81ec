"""
Matrix-valued kernels, projected Gram assembly and Gram factorization.

Every kernel evaluates to n_f x n_f blocks. Batched evaluation returns a 4-D array
of shape (n1, n_f, n2, n_f) whose entry [i, a, j, b] is k(x_i, x'_j)[a, b]; reshaping
it to (n1 * n_f, n2 * n_f) yields the block matrix [k(x_i, x'_j)]_{i,j}.
"""

import dataclasses
import itertools
import math

import numpy as np
from scipy.spatial.distance import cdist

from .linalg import PSD_TOLERANCE, check_symmetric, psd_eigh, psd_factor


def as_points(X, input_dim=None):
    """Ensure X is an (n, n_x) array; 1-D input is read as n scalar points."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("Inputs must be a 1-D or 2-D array, got shape {}.".format(X.shape))
    if input_dim is not None and X.shape[0] > 0 and X.shape[1] != input_dim:
        raise ValueError("Inputs have dimension {}, kernel expects {}.".format(X.shape[1], input_dim))
    return X


class KernelSpec:
    """Base class of all kernels. Instances are immutable after construction."""

    family = None

    @property
    def output_dim(self):
        return 1

    def blocks(self, X1, X2):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError

    def check_points(self, X1, X2):
        input_dim = getattr(self, "input_dim", None)
        X1, X2 = as_points(X1, input_dim), as_points(X2, input_dim)
        if X1.shape[0] and X2.shape[0] and X1.shape[1] != X2.shape[1]:
            raise ValueError("Input dimension mismatch ({} vs. {}).".format(X1.shape[1], X2.shape[1]))
        return X1, X2


class ScalarKernel(KernelSpec):

    def scalar(self, X1, X2):
        raise NotImplementedError

    def blocks(self, X1, X2):
        return self.scalar(X1, X2)[:, None, :, None]


@dataclasses.dataclass(frozen=True)
class SquaredExponentialKernel(ScalarKernel):
    """k(x, x') = variance * exp(-||x - x'||^2 / lengthscale^2)."""

    lengthscale: float = 1.0
    variance: float = 1.0
    input_dim: int = None

    family = "squared-exponential"

    def __post_init__(self):
        if not self.lengthscale > 0 or not self.variance > 0:
            raise ValueError("Lengthscale and variance must be positive (got {}, {}).".format(
                self.lengthscale, self.variance))

    def scalar(self, X1, X2):
        X1, X2 = self.check_points(X1, X2)
        if X1.shape[0] == 0 or X2.shape[0] == 0:
            return np.zeros((X1.shape[0], X2.shape[0]))
        sq_dist = cdist(X1, X2, metric="sqeuclidean")
        return self.variance * np.exp(-sq_dist / self.lengthscale ** 2)

    def to_dict(self):
        return dict(family=self.family, lengthscale=self.lengthscale, variance=self.variance,
                    input_dim=self.input_dim)


@dataclasses.dataclass(frozen=True)
class PeriodicKernel(ScalarKernel):
    """k(x, x') = variance * exp(-2 sum_d sin^2(pi |x_d - x'_d| / period) / lengthscale^2)."""

    lengthscale: float = 1.0
    period: float = 2.0 * math.pi
    variance: float = 1.0
    input_dim: int = None

    family = "periodic"

    def __post_init__(self):
        if not self.lengthscale > 0 or not self.period > 0 or not self.variance > 0:
            raise ValueError("Lengthscale, period and variance must be positive.")

    def scalar(self, X1, X2):
        X1, X2 = self.check_points(X1, X2)
        if X1.shape[0] == 0 or X2.shape[0] == 0:
            return np.zeros((X1.shape[0], X2.shape[0]))
        diff = np.abs(X1[:, None, :] - X2[None, :, :])
        sin_sq = np.sin(np.pi * diff / self.period) ** 2
        return self.variance * np.exp(-2.0 * sin_sq.sum(axis=-1) / self.lengthscale ** 2)

    def to_dict(self):
        return dict(family=self.family, lengthscale=self.lengthscale, period=self.period,
                    variance=self.variance, input_dim=self.input_dim)


@dataclasses.dataclass(frozen=True)
class DiagonalKernel(KernelSpec):
    """Independent outputs: k(x, x') = diag(k_1(x, x'), ..., k_nf(x, x'))."""

    components: tuple = ()

    family = "diagonal"

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if len(self.components) == 0:
            raise ValueError("A diagonal kernel needs at least one component.")
        for component in self.components:
            if not isinstance(component, ScalarKernel):
                raise ValueError("Diagonal kernel components must be scalar kernels, got {}.".format(
                    type(component).__name__))

    @property
    def output_dim(self):
        return len(self.components)

    def blocks(self, X1, X2):
        X1, X2 = self.check_points(X1, X2)
        n_f = self.output_dim
        out = np.zeros((X1.shape[0], n_f, X2.shape[0], n_f))
        for a, component in enumerate(self.components):
            out[:, a, :, a] = component.scalar(X1, X2)
        return out

    def to_dict(self):
        return dict(family=self.family, components=[c.to_dict() for c in self.components])


@dataclasses.dataclass(frozen=True)
class CoregionalizedKernel(KernelSpec):
    """k(x, x') = B * k_base(x, x') with a PSD output-coupling matrix B."""

    base: ScalarKernel = None
    coregionalization: tuple = ((1.0,),)

    family = "coregionalized"

    def __post_init__(self):
        if not isinstance(self.base, ScalarKernel):
            raise ValueError("Coregionalized kernel needs a scalar base kernel.")
        B = check_symmetric(np.array(self.coregionalization, dtype=float), name="Coregionalization matrix")
        psd_eigh(B, name="Coregionalization matrix")
        object.__setattr__(self, "coregionalization", tuple(map(tuple, B.tolist())))

    @property
    def output_dim(self):
        return len(self.coregionalization)

    def blocks(self, X1, X2):
        B = np.array(self.coregionalization)
        return np.einsum("ij,ab->iajb", self.base.scalar(X1, X2), B)

    def to_dict(self):
        return dict(family=self.family, base=self.base.to_dict(),
                    coregionalization=[list(row) for row in self.coregionalization])


@dataclasses.dataclass(frozen=True)
class FeatureKernel(KernelSpec):
    """Finite-dimensional hypothesis space: k(x, x') = Phi(x) Phi(x')^T.

    feature_fn maps an (n, n_x) array to (n, n_f, r) feature evaluations.
    """

    feature_fn: object = None
    n_outputs: int = 1
    n_features: int = None

    family = "feature"

    @property
    def output_dim(self):
        return self.n_outputs

    def features(self, X):
        X = as_points(X)
        Phi = np.asarray(self.feature_fn(X), dtype=float)
        if Phi.shape[:2] != (X.shape[0], self.n_outputs):
            raise ValueError("Feature map returned shape {}, expected ({}, {}, r).".format(
                Phi.shape, X.shape[0], self.n_outputs))
        return Phi

    def blocks(self, X1, X2):
        X1, X2 = self.check_points(X1, X2)
        return np.einsum("iar,jbr->iajb", self.features(X1), self.features(X2))

    def to_dict(self):
        raise ValueError("Kernels with arbitrary feature callables cannot be serialized.")


@dataclasses.dataclass(frozen=True)
class PolynomialFeatureKernel(FeatureKernel):
    """Monomials up to `degree`, shared by every output: Phi(x) = I_nf (x) phi(x)^T."""

    degree: int = 1
    input_dim: int = 1

    family = "polynomial-features"

    def __post_init__(self):
        if self.degree < 0 or self.n_outputs < 1:
            raise ValueError("Degree must be >= 0 and output count >= 1.")
        powers = [p for d in range(self.degree + 1)
                  for p in itertools.combinations_with_replacement(range(self.input_dim), d)]
        object.__setattr__(self, "_powers", tuple(powers))
        object.__setattr__(self, "n_features", self.n_outputs * len(powers))

    def features(self, X):
        X = as_points(X, self.input_dim)
        phi = np.stack([np.prod(X[:, list(p)], axis=1) for p in self._powers], axis=1)
        eye = np.eye(self.n_outputs)
        return np.einsum("ab,nr->nabr", eye, phi).reshape(X.shape[0], self.n_outputs, -1)

    def to_dict(self):
        return dict(family=self.family, degree=self.degree, output_dim=self.n_outputs,
                    input_dim=self.input_dim)


def kernel_from_dict(config):
    family = config.get("family")
    if family == SquaredExponentialKernel.family:
        return SquaredExponentialKernel(lengthscale=float(config.get("lengthscale", 1.0)),
                                        variance=float(config.get("variance", 1.0)),
                                        input_dim=config.get("input_dim"))
    if family == PeriodicKernel.family:
        return PeriodicKernel(lengthscale=float(config.get("lengthscale", 1.0)),
                              period=float(config.get("period", 2.0 * math.pi)),
                              variance=float(config.get("variance", 1.0)),
                              input_dim=config.get("input_dim"))
    if family == DiagonalKernel.family:
        return DiagonalKernel(components=tuple(kernel_from_dict(c) for c in config["components"]))
    if family == CoregionalizedKernel.family:
        return CoregionalizedKernel(base=kernel_from_dict(config["base"]),
                                    coregionalization=config["coregionalization"])
    if family == PolynomialFeatureKernel.family:
        return PolynomialFeatureKernel(degree=int(config.get("degree", 1)),
                                       n_outputs=int(config.get("output_dim", 1)),
                                       input_dim=int(config.get("input_dim", 1)))
    raise ValueError("Unknown kernel family '{}'.".format(family))


def kernel_matrix(spec, X1, X2):
    """Block matrix [k(x_i, x'_j)] of shape (n1 * n_f, n2 * n_f)."""
    B = spec.blocks(X1, X2)
    n1, n_f, n2, _ = B.shape
    return B.reshape(n1 * n_f, n2 * n_f)


def eval_kernel(spec, x, x_prime):
    x, x_prime = np.atleast_1d(np.asarray(x, dtype=float)), np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.ndim != 1 or x.shape != x_prime.shape:
        raise ValueError("Points must be vectors of equal dimension, got {} and {}.".format(
            x.shape, x_prime.shape))
    return spec.blocks(x[None, :], x_prime[None, :])[0, :, 0, :]


def measurement_matrix(measurements):
    """C^T = blkdiag(c_1^T, ..., c_N^T) with shape (N, n_f * N)."""
    measurements = np.atleast_2d(np.asarray(measurements, dtype=float))
    N, n_f = measurements.shape
    Ct = np.zeros((N, n_f * N))
    for i in range(N):
        Ct[i, i * n_f:(i + 1) * n_f] = measurements[i]
    return Ct


def projected_gram(spec, X, measurements):
    """C^T K_{1:N,1:N} C without forming C."""
    measurements = np.asarray(measurements, dtype=float)
    B = spec.blocks(X, X)
    return np.einsum("ia,iajb,jb->ij", measurements, B, measurements)


def projected_cross(spec, x, X, measurements):
    """K_{x,1:N} C with shape (n_f, N)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    B = spec.blocks(x[None, :], X)[0]
    return np.einsum("ajb,jb->aj", B, np.asarray(measurements, dtype=float))


@dataclasses.dataclass(frozen=True, eq=False)
class GramSystem:
    K_full: np.ndarray
    Ct: np.ndarray
    output_dim: int

    @property
    def n_train(self):
        return self.Ct.shape[0]

    @property
    def train_block(self):
        m = self.output_dim * self.n_train
        return self.K_full[:m, :m]

    @property
    def cross_block(self):
        """K_{N+1,1:N}, shape (n_f, n_f * N)."""
        m = self.output_dim * self.n_train
        return self.K_full[m:, :m]

    @property
    def test_block(self):
        m = self.output_dim * self.n_train
        return self.K_full[m:, m:]

    @property
    def projected_train(self):
        return self.Ct @ self.train_block @ self.Ct.T

    @property
    def projected_cross(self):
        return self.cross_block @ self.Ct.T


def assemble_gram(spec, inputs, measurements):
    """Gram system on training inputs plus one test point (the last input)."""
    inputs = as_points(inputs, getattr(spec, "input_dim", None))
    measurements = np.asarray(measurements, dtype=float).reshape(-1, spec.output_dim)
    if inputs.shape[0] != measurements.shape[0] + 1:
        raise ValueError("Expected N + 1 = {} inputs for {} measurements, got {}.".format(
            measurements.shape[0] + 1, measurements.shape[0], inputs.shape[0]))
    K_full = kernel_matrix(spec, inputs, inputs)
    return GramSystem(K_full=K_full, Ct=measurement_matrix(measurements), output_dim=spec.output_dim)


@dataclasses.dataclass(frozen=True, eq=False)
class FeatureSpaceProblem:
    phi: np.ndarray
    output_dim: int = 1

    @property
    def rank(self):
        return self.phi.shape[1]

    def block(self, i):
        return self.phi[i * self.output_dim:(i + 1) * self.output_dim]

    def reconstruct(self):
        return self.phi @ self.phi.T


def factorize_gram(K_full, output_dim=1, threshold=PSD_TOLERANCE):
    """Full-column-rank factor Phi with Phi Phi^T = K_full (eigenvalues below threshold * max dropped)."""
    phi = psd_factor(K_full, threshold=threshold, name="Gram matrix")
    return FeatureSpaceProblem(phi=phi, output_dim=output_dim)
