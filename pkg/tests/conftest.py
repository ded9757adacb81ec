import dataclasses

import numpy as np
import pytest

from kernel_bounds.gp_core import Problem
from kernel_bounds.kernels import CoregionalizedKernel, DiagonalKernel, SquaredExponentialKernel
from kernel_bounds.noise_model import energy_noise, general_noise, pointwise_noise
from kernel_bounds.scenarios import random_rkhs_function

NOISE_KINDS = ("pointwise", "energy", "general")


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale reproduction, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@dataclasses.dataclass(frozen=True, eq=False)
class Instance:
    problem: Problem
    truth: object
    noise: np.ndarray
    x: np.ndarray
    h: np.ndarray


def random_noise(kind, n, rng):
    """Noise model and a realization strictly inside it."""
    if kind == "pointwise":
        model = pointwise_noise(rng.uniform(0.1, 0.3, size=n))
    elif kind == "energy":
        A = rng.standard_normal((n, n))
        P1 = A @ A.T / n + 0.5 * np.eye(n)
        model = energy_noise(P1, rng.uniform(0.2, 0.4))
    else:
        constraints = [(np.eye(n), rng.uniform(0.3, 0.5))]
        pair = np.zeros((n, n))
        B = rng.standard_normal((2, 2))
        pair[:2, :2] = B @ B.T + 0.1 * np.eye(2)
        constraints.append((pair, rng.uniform(0.1, 0.3)))
        A = rng.standard_normal((n, 2))
        constraints.append((A @ A.T, rng.uniform(0.1, 0.3)))
        model = general_noise(constraints)

    w = rng.standard_normal(n)
    ratio = np.max(np.sqrt(model.quadratic_forms(w)) / model.gammas)
    w *= 0.8 * rng.uniform(0.2, 1.0) / ratio
    return model, w


def random_instance(seed, kind="pointwise", output_dim=1, n=None, gamma_f=1.0):
    rng = np.random.default_rng(seed)
    n = n if n is not None else int(rng.integers(2, 7))
    if output_dim == 1:
        kernel = SquaredExponentialKernel(lengthscale=rng.uniform(0.5, 1.5))
    elif seed % 2:
        kernel = DiagonalKernel(components=(SquaredExponentialKernel(lengthscale=1.0),
                                            SquaredExponentialKernel(lengthscale=0.7)))
    else:
        B = rng.standard_normal((2, 2))
        kernel = CoregionalizedKernel(base=SquaredExponentialKernel(lengthscale=1.0),
                                      coregionalization=B @ B.T + 0.2 * np.eye(2))

    centers = rng.uniform(-1.0, 4.0, size=(6, 1))
    truth = random_rkhs_function(kernel, 0.8 * gamma_f, centers, seed=int(rng.integers(2 ** 32)), gamma_f=gamma_f)
    inputs = rng.uniform(0.0, 3.0, size=(n, 1))
    measurements = rng.standard_normal((n, output_dim))
    measurements /= np.linalg.norm(measurements, axis=1, keepdims=True)
    noise_model, w = random_noise(kind, n, rng)
    y = np.einsum("ia,ia->i", measurements, truth(inputs)) + w

    problem = Problem(inputs=inputs, measurements=measurements, y=y, kernel=kernel, noise=noise_model,
                      gamma_f=gamma_f)
    h = rng.standard_normal(output_dim)
    return Instance(problem=problem, truth=truth, noise=w, x=rng.uniform(-0.5, 3.5, size=1), h=h / np.linalg.norm(h))


@pytest.fixture
def make_instance():
    return random_instance


@pytest.fixture
def scalar_problem():
    """Two SE samples under point-wise bounds."""
    return Problem(inputs=[[0.5], [2.0]], measurements=[[1.0], [1.0]], y=[0.3, -0.2],
                   kernel=SquaredExponentialKernel(lengthscale=1.0), noise=pointwise_noise([0.2, 0.2]), gamma_f=1.0)


@pytest.fixture
def empty_problem():
    return Problem(inputs=np.zeros((0, 1)), measurements=np.zeros((0, 1)), y=np.zeros(0),
                   kernel=SquaredExponentialKernel(lengthscale=1.0), noise=pointwise_noise([]), gamma_f=2.0)
