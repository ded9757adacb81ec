import dataclasses

import numpy as np
import pytest

from kernel_bounds.dual_bound import (STATUSES, BoundQuery, DualObjective, OptimizerOptions, dual_gradient,
                                      dual_value, dual_value_and_log_gradient, ellipsoid_bound, optimize_bound,
                                      two_sided_interval)
from kernel_bounds.exceptions import BoundaryConditionError, InfeasibleProblemError, SingularCovarianceError
from kernel_bounds.gp_core import Problem
from kernel_bounds.kernels import CoregionalizedKernel, SquaredExponentialKernel
from kernel_bounds.noise_model import SIGMA_CAP, block_noise, pointwise_noise
from kernel_bounds.oracle import relaxed_closed_form, solve_primal

INSTANCES = [(seed, kind, output_dim) for seed in range(4) for kind in ("pointwise", "energy", "general")
             for output_dim in (1, 2)]
ACCURATE = OptimizerOptions(max_iterations=300, refine=True, refine_iterations=1000)


def random_sigma(problem, rng):
    return problem.noise.gammas * np.exp(rng.uniform(-1.5, 2.5, size=problem.noise.n_con))


def query_of(instance):
    return BoundQuery(x=instance.x, h=instance.h)


@pytest.mark.parametrize("seed,kind,output_dim", INSTANCES)
def test_log_gradient_matches_finite_differences(make_instance, seed, kind, output_dim):
    instance = make_instance(seed, kind=kind, output_dim=output_dim)
    problem, query = instance.problem, query_of(instance)
    rng = np.random.default_rng(seed + 100)
    step = 1e-5
    for _ in range(5):
        sigma = random_sigma(problem, rng)
        value, log_gradient = dual_value_and_log_gradient(problem, query, sigma)
        numeric = np.zeros_like(log_gradient)
        for j in range(sigma.size):
            shift = np.zeros_like(sigma)
            shift[j] = step
            numeric[j] = (dual_value(problem, query, sigma * np.exp(shift))
                          - dual_value(problem, query, sigma * np.exp(-shift))) / (2.0 * step)
        np.testing.assert_allclose(log_gradient, numeric, rtol=1e-4, atol=1e-7 * max(abs(value), 1.0))
        np.testing.assert_allclose(dual_gradient(problem, query, sigma), log_gradient / sigma)


@pytest.mark.parametrize("seed,kind,output_dim", INSTANCES)
def test_dual_value_upper_bounds_oracle(make_instance, seed, kind, output_dim):
    instance = make_instance(seed, kind=kind, output_dim=output_dim)
    problem, query = instance.problem, query_of(instance)
    optimum = solve_primal(problem, query).value
    prior = problem.prior_bound(instance.x, instance.h)
    rng = np.random.default_rng(seed + 200)
    for _ in range(100):
        assert dual_value(problem, query, random_sigma(problem, rng)) >= optimum - 1e-8 * max(prior, 1.0)


@pytest.mark.parametrize("seed,kind,output_dim", INSTANCES)
def test_optimized_bound_matches_oracle(make_instance, seed, kind, output_dim):
    instance = make_instance(seed, kind=kind, output_dim=output_dim)
    problem, query = instance.problem, query_of(instance)
    certificate = optimize_bound(problem, query, ACCURATE)
    optimum = solve_primal(problem, query).value
    prior = problem.prior_bound(instance.x, instance.h)
    assert abs(certificate.value - optimum) <= max(1e-5, 1e-4 * prior)
    assert certificate.status in STATUSES
    assert certificate.value <= certificate.initial_value
    assert certificate.recompute() == pytest.approx(certificate.value, rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("seed,kind,output_dim", INSTANCES)
def test_relaxed_closed_form_matches_dual_value(make_instance, seed, kind, output_dim):
    instance = make_instance(seed, kind=kind, output_dim=output_dim)
    problem, query = instance.problem, query_of(instance)
    prior = problem.prior_bound(instance.x, instance.h)
    rng = np.random.default_rng(seed + 300)
    for _ in range(21):
        sigma = random_sigma(problem, rng)
        assert relaxed_closed_form(problem, query, sigma) == pytest.approx(
            dual_value(problem, query, sigma), rel=1e-9, abs=1e-12 * prior)


def feasible_grid_minimum(problem, query, points_per_axis):
    axes = [np.append(np.log(gamma) + np.linspace(-4.0, 6.0, points_per_axis), np.log(SIGMA_CAP))
            for gamma in problem.noise.gammas]
    grid = np.exp(np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes)))
    values = []
    for sigma in grid:
        try:
            values.append(dual_value(problem, query, sigma))
        except InfeasibleProblemError:
            continue
    return min(values)


@pytest.mark.parametrize("seed,kind", [(s, k) for s in range(7) for k in ("pointwise", "energy", "general")])
def test_stationary_points_are_global(make_instance, seed, kind):
    n, points_per_axis = {"pointwise": (2, 60), "energy": (None, 300), "general": (None, 16)}[kind]
    instance = make_instance(seed, kind=kind, n=n)
    problem, query = instance.problem, query_of(instance)
    grid_minimum = feasible_grid_minimum(problem, query, points_per_axis)

    rng = np.random.default_rng(seed + 400)
    values = []
    for _ in range(10):
        opts = dataclasses.replace(ACCURATE, initial_sigma=tuple(random_sigma(problem, rng)))
        values.append(optimize_bound(problem, query, opts).value)
    np.testing.assert_allclose(values, values[0], rtol=1e-6, atol=1e-10)
    assert max(values) <= grid_minimum + 1e-6 * abs(grid_minimum) + 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_dual_value_tends_to_prior_at_cap(make_instance, seed):
    instance = make_instance(seed, kind="general", output_dim=2)
    problem, query = instance.problem, query_of(instance)
    prior = problem.prior_bound(instance.x, instance.h)
    assert dual_value(problem, query, SIGMA_CAP) == pytest.approx(prior, abs=1e-5 * prior)


def test_bound_scales_with_direction(make_instance):
    instance = make_instance(7, kind="energy", output_dim=2)
    problem = instance.problem
    unit = optimize_bound(problem, BoundQuery(x=instance.x, h=instance.h), ACCURATE)
    scaled = optimize_bound(problem, BoundQuery(x=instance.x, h=3.0 * instance.h), ACCURATE)
    assert scaled.value == pytest.approx(3.0 * unit.value, rel=1e-6)


def test_empty_problem_returns_prior(empty_problem):
    certificate = optimize_bound(empty_problem, BoundQuery(x=[0.5], h=[1.0]))
    assert certificate.iterations == 0
    assert certificate.value == pytest.approx(2.0)


def test_zero_direction_is_rejected():
    with pytest.raises(ValueError):
        BoundQuery(x=[0.0], h=[0.0])


def test_optimizer_options_validation():
    with pytest.raises(ValueError):
        OptimizerOptions(learning_rate=0.0)
    with pytest.raises(ValueError):
        OptimizerOptions.from_dict(dict(momentum=0.9))
    assert OptimizerOptions.from_dict(dict(max_iterations=5)).max_iterations == 5


def test_two_sided_interval_contains_truth(make_instance):
    for seed in range(3):
        instance = make_instance(seed, kind="pointwise", output_dim=2)
        interval = two_sided_interval(instance.problem, instance.x, instance.h, ACCURATE)
        value = instance.h @ instance.truth(instance.x[None, :])[0]
        assert interval.lower - 1e-8 <= value <= interval.upper + 1e-8


def test_ellipsoid_support_matches_dual_value(make_instance):
    instance = make_instance(2, kind="general", output_dim=2)
    problem = instance.problem
    sigma = np.ones(problem.noise.n_con)
    ellipsoid = ellipsoid_bound(problem, instance.x, sigma)
    rng = np.random.default_rng(0)
    for _ in range(5):
        h = rng.standard_normal(2)
        assert ellipsoid.support(h) == pytest.approx(dual_value(problem, BoundQuery(x=instance.x, h=h), sigma),
                                                     rel=1e-10)
    center, _, _ = ellipsoid
    assert ellipsoid.contains(center)
    assert ellipsoid.contains(instance.truth(instance.x[None, :])[0])


def test_ellipsoid_rejects_singular_covariance():
    kernel = CoregionalizedKernel(base=SquaredExponentialKernel(), coregionalization=[[1.0, 1.0], [1.0, 1.0]])
    problem = Problem(inputs=[[0.0]], measurements=[[1.0, 0.0]], y=[0.1], kernel=kernel,
                      noise=pointwise_noise([0.2]), gamma_f=1.0)
    with pytest.raises(SingularCovarianceError):
        ellipsoid_bound(problem, [0.5], [0.2])


def test_empty_problem_with_block_noise_has_closed_form_gradient():
    noise = block_noise(0, [[]], [np.zeros((0, 0))], [0.2])
    problem = Problem(inputs=np.zeros((0, 1)), measurements=np.zeros((0, 1)), y=np.zeros(0),
                      kernel=SquaredExponentialKernel(lengthscale=1.0), noise=noise, gamma_f=2.0)
    query = BoundQuery(x=[0.3], h=[1.0])
    sigma = np.array([0.5])
    tau = np.sqrt(problem.prior_covariance([0.3])[0, 0])
    beta = np.sqrt(2.0 ** 2 + 0.2 ** 2 / 0.5 ** 2)

    assert dual_value(problem, query, sigma) == pytest.approx(beta * tau, rel=1e-12)
    np.testing.assert_allclose(dual_gradient(problem, query, sigma), [-tau * 0.2 ** 2 / (beta * 0.5 ** 3)],
                               rtol=1e-12)
    certificate = optimize_bound(problem, query)
    assert certificate.status == "boundary-limit"
    assert certificate.value == pytest.approx(2.0 * tau, rel=1e-10)


def record_gradient_evaluations(monkeypatch, fail_after=None):
    recorded = []
    evaluate = DualObjective.evaluate

    def recording(self, sigma, gradient=False):
        if gradient and fail_after is not None and len(recorded) >= fail_after:
            raise BoundaryConditionError("beta_sigma vanished")
        result = evaluate(self, sigma, gradient)
        if gradient:
            recorded.append(result[0])
        return result

    monkeypatch.setattr(DualObjective, "evaluate", recording)
    return recorded


@pytest.mark.parametrize("seed", range(4))
def test_certificate_keeps_lowest_iterate(make_instance, monkeypatch, seed):
    instance = make_instance(seed, kind="general")
    recorded = record_gradient_evaluations(monkeypatch)
    certificate = optimize_bound(instance.problem, query_of(instance), OptimizerOptions(max_iterations=40))
    assert certificate.value == pytest.approx(min(recorded), rel=1e-12, abs=1e-15)
    assert certificate.value <= certificate.initial_value


@pytest.mark.parametrize("refine", [False, True])
def test_vanishing_scaling_factor_keeps_best_iterate(make_instance, monkeypatch, refine):
    instance = make_instance(3, kind="energy")
    recorded = record_gradient_evaluations(monkeypatch, fail_after=6)
    opts = OptimizerOptions(max_iterations=200, gradient_tolerance=1e-14, refine=refine)
    certificate = optimize_bound(instance.problem, query_of(instance), opts)
    assert len(recorded) == 6
    assert certificate.status in STATUSES
    assert certificate.value == pytest.approx(min(recorded), rel=1e-12, abs=1e-15)
