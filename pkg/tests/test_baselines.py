import itertools

import numpy as np
import pytest

from kernel_bounds.baselines import (Envelope, UniformNoiseBound, box_qp, fixed_sigma, fixed_sigma_bound,
                                     reed_bound, scharnhorst_alternating, scharnhorst_dual_value, soft_threshold)
from kernel_bounds.dual_bound import BoundQuery, dual_value, optimize_bound
from kernel_bounds.oracle import solve_primal
from kernel_bounds.scenarios import gen_illustrative


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("variant", ["hashimoto", "yang"])
def test_fixed_sigma_bound_is_dual_value(make_instance, seed, variant):
    instance = make_instance(seed, kind="pointwise", output_dim=2)
    problem = instance.problem
    envelope = fixed_sigma_bound(problem, instance.x, variant, instance.h)
    sigma = fixed_sigma(problem, variant)
    np.testing.assert_allclose(envelope.sigma, sigma)
    assert envelope.upper == pytest.approx(dual_value(problem, BoundQuery(x=instance.x, h=instance.h), sigma),
                                           rel=1e-12, abs=1e-14)
    assert envelope.lower <= envelope.upper


def test_fixed_sigma_values(scalar_problem):
    np.testing.assert_allclose(fixed_sigma(scalar_problem, "hashimoto"), [0.2, 0.2])
    np.testing.assert_allclose(fixed_sigma(scalar_problem, "yang"), np.sqrt(2.0) * np.array([0.2, 0.2]))
    with pytest.raises(ValueError):
        fixed_sigma(scalar_problem, "nominal")


@pytest.mark.parametrize("seed", range(6))
def test_baselines_dominate_optimized_bound(make_instance, seed):
    instance = make_instance(seed, kind="pointwise", output_dim=1 + seed % 2)
    problem, query = instance.problem, BoundQuery(x=instance.x, h=instance.h)
    optimum = solve_primal(problem, query).value
    optimized = optimize_bound(problem, query).value
    tolerance = 1e-6 * max(problem.prior_bound(instance.x, instance.h), 1.0)

    assert fixed_sigma_bound(problem, instance.x, "hashimoto", instance.h).upper >= optimized - 1e-12
    assert fixed_sigma_bound(problem, instance.x, "yang", instance.h).upper >= optimum - tolerance
    assert reed_bound(problem, instance.x, h=instance.h).upper >= optimum - tolerance


def test_baselines_contain_truth():
    scenario = gen_illustrative(seed=3, n_grid=25)
    problem = scenario.problem
    for x in scenario.test_inputs:
        value = scenario.truth(x[None, :])[0, 0]
        for envelope in (reed_bound(problem, x), fixed_sigma_bound(problem, x, "hashimoto"),
                         fixed_sigma_bound(problem, x, "yang")):
            assert envelope.lower - 1e-8 <= value <= envelope.upper + 1e-8


def test_baselines_require_pointwise_noise(make_instance):
    problem = make_instance(0, kind="energy").problem
    with pytest.raises(ValueError):
        reed_bound(problem, [1.0])
    with pytest.raises(ValueError):
        UniformNoiseBound.from_noise_model(problem.noise)


def test_scharnhorst_dual_at_zero_weights_is_prior(scalar_problem):
    query = BoundQuery(x=[1.0], h=[1.0])
    prior = scalar_problem.prior_bound([1.0], [1.0])
    lam = prior / (2.0 * scalar_problem.gamma_f ** 2)
    assert scharnhorst_dual_value(scalar_problem, query, np.zeros(2), lam) == pytest.approx(prior)
    with pytest.raises(ValueError):
        scharnhorst_dual_value(scalar_problem, query, np.zeros(2), 0.0)


@pytest.mark.parametrize("seed", range(4))
def test_alternating_approaches_oracle(make_instance, seed):
    instance = make_instance(seed, kind="pointwise")
    problem, query = instance.problem, BoundQuery(x=instance.x, h=instance.h)
    optimum = solve_primal(problem, query).value
    prior = problem.prior_bound(instance.x, instance.h)

    result = scharnhorst_alternating(problem, query, tol=1e-13, max_iter=20000, inner_iterations=5000)
    assert np.all(np.diff(result.trace) <= 1e-12 * max(abs(result.trace[0]), 1.0))
    assert result.value >= optimum - 1e-6 * prior
    assert result.value - optimum <= 1e-4 * max(abs(optimum), prior - optimum)
    assert result.value == pytest.approx(scharnhorst_dual_value(problem, query, result.nu, result.lam))


def test_alternating_stops_at_target(scalar_problem):
    query = BoundQuery(x=[1.0], h=[1.0])
    start = scharnhorst_alternating(scalar_problem, query, max_iter=1).trace[0]
    result = scharnhorst_alternating(scalar_problem, query, tol=1e-14, stop_value=start)
    assert result.status == "target-reached"
    assert result.iterations == 1


def test_soft_threshold():
    np.testing.assert_allclose(soft_threshold(np.array([-2.0, 0.5, 3.0]), np.array([1.0, 1.0, 1.0])),
                               [-1.0, 0.0, 2.0])


def test_box_qp_clips_unconstrained_minimizer():
    x = box_qp(np.eye(3), -np.array([2.0, -3.0, 0.5]), -1.0, 1.0)
    np.testing.assert_allclose(x, [1.0, -1.0, 0.5], atol=1e-8)


def test_box_qp_satisfies_stationarity():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((8, 8))
    M = A @ A.T + 0.1 * np.eye(8)
    c = 3.0 * rng.standard_normal(8)
    lower, upper = -0.5 * np.ones(8), np.ones(8)
    x = box_qp(M, c, lower, upper, tol=1e-10)
    assert np.all(x >= lower) and np.all(x <= upper)
    gradient = M @ x + c
    np.testing.assert_allclose(np.clip(x - gradient, lower, upper), x, atol=1e-8)

    with pytest.raises(ValueError):
        box_qp(M, c, upper, lower)


def exhaustive_box_minimum(M, c, lower, upper):
    """Enumerate every active set of a 2-D box QP; each free block is solved exactly."""
    best = np.inf
    for pattern in itertools.product(("lower", "upper", "free"), repeat=2):
        x = np.array([lower[i] if p == "lower" else upper[i] if p == "upper" else 0.0
                      for i, p in enumerate(pattern)])
        free = np.array([p == "free" for p in pattern])
        if free.any():
            fixed = ~free
            rhs = -c[free] - M[np.ix_(free, fixed)] @ x[fixed]
            x[free] = np.linalg.solve(M[np.ix_(free, free)], rhs)
        if np.all(x >= lower - 1e-12) and np.all(x <= upper + 1e-12):
            best = min(best, 0.5 * x @ M @ x + c @ x)
    return best


@pytest.mark.parametrize("seed", range(10))
def test_box_qp_matches_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((2, 2))
    M = A @ A.T + 0.05 * np.eye(2)
    c = 2.0 * rng.standard_normal(2)
    lower, upper = -rng.uniform(0.1, 1.0, size=2), rng.uniform(0.1, 1.0, size=2)

    x = box_qp(M, c, lower, upper, tol=1e-10)
    value = 0.5 * x @ M @ x + c @ x
    assert value == pytest.approx(exhaustive_box_minimum(M, c, lower, upper), rel=1e-8, abs=1e-10)

    axes = [np.linspace(lo, hi, 201) for lo, hi in zip(lower, upper)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2)
    grid_values = 0.5 * np.einsum("ki,ij,kj->k", grid, M, grid) + grid @ c
    assert value <= grid_values.min() + 1e-10


def test_reed_inner_problem_on_two_points(scalar_problem):
    problem = scalar_problem
    envelope = reed_bound(problem, [1.0], sigma_bar=0.2)
    K_hat = problem.training_gram + 0.2 ** 2 * np.eye(2)
    K_inv = np.linalg.inv(K_hat)
    gammas = problem.noise.gammas
    fit = problem.y @ K_inv @ problem.y + exhaustive_box_minimum(2.0 * K_inv, -2.0 * K_inv @ problem.y, -gammas,
                                                                 gammas)
    k_star = problem.cross_covariance([1.0])[0]
    variance = problem.prior_covariance([1.0])[0, 0] - k_star @ K_inv @ k_star
    expected = np.sqrt(problem.gamma_f ** 2 - fit) * np.sqrt(variance) + gammas @ np.abs(K_inv @ k_star)
    assert envelope.half_width == pytest.approx(expected, rel=1e-7)


def test_envelope_limits():
    envelope = Envelope(center=1.0, half_width=0.25)
    assert (envelope.lower, envelope.upper) == (0.75, 1.25)
