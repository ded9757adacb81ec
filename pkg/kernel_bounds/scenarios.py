"""
Reproducible problem generators.

Every generator is a pure function of its configuration and seed. The generating latent
function and noise realization are returned with the problem, so containment can be checked.
"""

import dataclasses
import math

import numpy as np

from .gp_core import Problem
from .kernels import DiagonalKernel, PeriodicKernel, SquaredExponentialKernel, as_points, kernel_matrix
from .linalg import jitter_cholesky
from .noise_model import block_noise, pointwise_noise


@dataclasses.dataclass(frozen=True, eq=False)
class RKHSFunction:
    """f(x) = sum_c k(x, x_c) alpha_c."""

    kernel: object
    centers: np.ndarray
    coefficients: np.ndarray

    def __call__(self, X):
        B = self.kernel.blocks(as_points(X), self.centers)
        return np.einsum("iajb,jb->ia", B, self.coefficients)

    @property
    def norm(self):
        alpha = self.coefficients.reshape(-1)
        K = kernel_matrix(self.kernel, self.centers, self.centers)
        return float(np.sqrt(max(alpha @ K @ alpha, 0.0)))


def random_rkhs_function(kernel, gamma_target, centers, seed=0, gamma_f=None):
    """Kernel expansion with standard-normal coefficients rescaled to RKHS norm gamma_target."""
    if not gamma_target > 0:
        raise ValueError("Target norm must be positive, got {}.".format(gamma_target))
    if gamma_f is not None and not gamma_target < gamma_f:
        raise ValueError("Target norm {} must stay below the budget {}.".format(gamma_target, gamma_f))
    centers = as_points(centers)
    if centers.shape[0] == 0:
        raise ValueError("Need at least one center.")

    K = kernel_matrix(kernel, centers, centers)
    jitter_cholesky(K)
    rng = np.random.default_rng(seed)
    alpha = rng.standard_normal(K.shape[0])
    norm_sq = alpha @ K @ alpha
    if not norm_sq > 1e-300:
        raise ValueError("Drawn kernel expansion has zero RKHS norm.")
    alpha *= gamma_target / np.sqrt(norm_sq)
    return RKHSFunction(kernel=kernel, centers=centers, coefficients=alpha.reshape(centers.shape[0], -1))


@dataclasses.dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    problem: Problem
    truth: RKHSFunction
    noise: np.ndarray
    test_inputs: np.ndarray
    metadata: dict = dataclasses.field(default_factory=dict)

    def truth_margins(self):
        """Noise-constraint margins of the generating noise realization (all positive)."""
        return self.problem.noise.margins(self.noise)


ILLUSTRATIVE_TEST_POINT = 1.5


def gen_illustrative(seed=0, n_grid=200, n_data=2, log_fn=lambda _, **_kwargs: None):
    """Few noisy samples (two by default) of a random function under a unit squared-exponential kernel."""
    if n_data < 1:
        raise ValueError("n_data must be >= 1, got {}.".format(n_data))
    rng = np.random.default_rng(seed)
    kernel = SquaredExponentialKernel(lengthscale=1.0)
    gamma_f, bound = 1.0, 0.2

    truth = random_rkhs_function(kernel, 0.9 * gamma_f, np.linspace(-1.0, 4.0, 8), seed=int(rng.integers(2 ** 32)),
                                 gamma_f=gamma_f)
    inputs = rng.uniform(0.0, 3.0, size=(n_data, 1))
    noise = 0.95 * bound * rng.uniform(-1.0, 1.0, size=n_data)
    y = truth(inputs)[:, 0] + noise

    problem = Problem(inputs=inputs, measurements=np.ones((n_data, 1)), y=y, kernel=kernel,
                      noise=pointwise_noise(np.full(n_data, bound)), gamma_f=gamma_f)
    grid = np.union1d(np.linspace(-1.0, 4.0, n_grid), [ILLUSTRATIVE_TEST_POINT])
    scenario = Scenario(name="illustrative", problem=problem, truth=truth, noise=noise, test_inputs=grid[:, None],
                        metadata=dict(seed=seed, truth_norm=truth.norm, anchor=ILLUSTRATIVE_TEST_POINT))
    log_fn("generated illustrative scenario", seed=seed, truth_norm=truth.norm,
           min_noise_margin=float(np.min(scenario.truth_margins())))
    return scenario


@dataclasses.dataclass(frozen=True)
class QuadrotorConfig:
    """Residual acceleration of a planar quadrotor over its tilt angle under an elliptic wind bound."""

    n_data: int = 100
    wind_semi_axes: tuple = (0.3, 0.1)
    lengthscale: float = 1.0
    period: float = 2.0 * math.pi
    gamma_f: float = 1.0
    norm_ratio: float = 0.9
    n_centers: int = 20
    noise_fill: float = 0.999
    n_test: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.n_data < 1:
            raise ValueError("n_data must be >= 1, got {}.".format(self.n_data))
        if len(self.wind_semi_axes) != 2 or min(self.wind_semi_axes) <= 0:
            raise ValueError("Wind semi-axes must be two positive numbers, got {}.".format(self.wind_semi_axes))
        if not 0 < self.norm_ratio < 1 or not 0 < self.noise_fill < 1:
            raise ValueError("norm_ratio and noise_fill must lie in (0, 1).")
        object.__setattr__(self, "wind_semi_axes", tuple(float(a) for a in self.wind_semi_axes))

    @classmethod
    def from_dict(cls, config):
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(config) - fields
        if unknown:
            raise ValueError("Unknown quadrotor options: {}.".format(", ".join(sorted(unknown))))
        return cls(**config)

    def kernel(self):
        component = PeriodicKernel(lengthscale=self.lengthscale, period=self.period)
        return DiagonalKernel(components=(component, component))


def uniform_wind_bound(config):
    """Smallest uniform point-wise bound covering the wind ellipse at every tilt angle."""
    return max(config.wind_semi_axes)


def rotation(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def gen_quadrotor(config=None, log_fn=lambda _, **_kwargs: None):
    config = config or QuadrotorConfig()
    rng = np.random.default_rng(config.seed)
    kernel = config.kernel()
    a, b = config.wind_semi_axes
    wind_shape = np.diag([1.0 / a ** 2, 1.0 / b ** 2])

    centers = rng.uniform(0.0, 2.0 * np.pi, size=(config.n_centers, 1))
    truth = random_rkhs_function(kernel, config.norm_ratio * config.gamma_f, centers,
                                 seed=int(rng.integers(2 ** 32)), gamma_f=config.gamma_f)

    angles = rng.uniform(0.0, 2.0 * np.pi, size=config.n_data)
    radius = np.sqrt(rng.uniform(size=config.n_data))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=config.n_data)
    wind = config.noise_fill * np.stack([a * radius * np.cos(phase), b * radius * np.sin(phase)], axis=1)

    supports, blocks, body_noise = [], [], []
    for j, angle in enumerate(angles):
        R = rotation(angle)
        supports.append([2 * j, 2 * j + 1])
        # Body-frame noise w_b = R^T w_g satisfies w_b^T R^T D R w_b <= 1.
        blocks.append(R.T @ wind_shape @ R)
        body_noise.append(R.T @ wind[j])
    noise = np.concatenate(body_noise)

    n = 2 * config.n_data
    inputs = np.repeat(angles, 2)[:, None]
    measurements = np.tile(np.eye(2), (config.n_data, 1))
    y = truth(angles).reshape(-1) + noise

    problem = Problem(inputs=inputs, measurements=measurements, y=y, kernel=kernel,
                      noise=block_noise(n, supports, blocks, np.ones(config.n_data)), gamma_f=config.gamma_f)
    test_inputs = rng.uniform(0.0, 2.0 * np.pi, size=(config.n_test, 1))
    scenario = Scenario(name="quadrotor", problem=problem, truth=truth, noise=noise, test_inputs=test_inputs,
                        metadata=dict(config=dataclasses.asdict(config), truth_norm=truth.norm,
                                      uniform_bound=uniform_wind_bound(config)))
    log_fn("generated quadrotor scenario", seed=config.seed, n_data=config.n_data, truth_norm=truth.norm,
           min_noise_margin=float(np.min(scenario.truth_margins())))
    return scenario


def pointwise_variant(scenario, output_index=0, gamma_bar=None):
    """Keep the measurements of one output under a uniform point-wise noise bound."""
    problem = scenario.problem
    n_f = problem.output_dim
    if not 0 <= output_index < n_f:
        raise ValueError("Output index {} out of range for {} outputs.".format(output_index, n_f))
    target = np.eye(n_f)[output_index]
    rows = np.flatnonzero(np.all(problem.measurements == target, axis=1))
    if gamma_bar is None:
        gamma_bar = scenario.metadata.get("uniform_bound", problem.noise.uniform_bound())

    reduced = Problem(inputs=problem.inputs[rows], measurements=problem.measurements[rows], y=problem.y[rows],
                      kernel=problem.kernel, noise=pointwise_noise(np.full(rows.size, gamma_bar)),
                      gamma_f=problem.gamma_f)
    metadata = dict(scenario.metadata, variant="pointwise", output_index=output_index, uniform_bound=gamma_bar)
    return Scenario(name=scenario.name + "-p", problem=reduced, truth=scenario.truth, noise=scenario.noise[rows],
                    test_inputs=scenario.test_inputs, metadata=metadata)
