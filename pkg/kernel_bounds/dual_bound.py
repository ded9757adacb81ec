"""
Worst-case bounds by minimizing the GP-based dual function over the noise parameters.

For a direction h and a test input x, every sigma > 0 yields the valid upper bound

    f_bar(sigma) = h^T mu_sigma(x) + beta_sigma * sqrt(h^T Sigma_sigma(x) h)

on h^T f(x), and every stationary point of sigma -> f_bar(sigma) is a global minimizer
whose value is the tightest bound. The minimization runs in log(sigma).
"""

import dataclasses
import typing

import numpy as np
import scipy.optimize

from .exceptions import BoundaryConditionError, InfeasibleProblemError, SingularCovarianceError
from .gp_core import beta_sigma, factorize
from .noise_model import SIGMA_CAP

STATUSES = ("converged", "iteration-limit", "boundary-limit")


@dataclasses.dataclass(frozen=True, eq=False)
class BoundQuery:
    x: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        h = np.atleast_1d(np.asarray(self.h, dtype=float)).reshape(-1)
        if x.ndim != 1:
            raise ValueError("Test point must be a vector, got shape {}.".format(x.shape))
        if not np.linalg.norm(h) > 0:
            raise ValueError("Bound direction h must be nonzero.")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "h", h)

    @property
    def norm(self):
        return float(np.linalg.norm(self.h))

    def reversed(self):
        return BoundQuery(x=self.x, h=-self.h)


@dataclasses.dataclass(frozen=True)
class OptimizerOptions:
    """Adam in log(sigma) with an optional L-BFGS-B polish.

    init is "auto" (sigma_j = gamma_j for point-wise and energy noise, 1 otherwise) or "ones";
    initial_sigma overrides both.
    """

    learning_rate: float = 0.1
    max_iterations: int = 100
    gradient_tolerance: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    init: str = "auto"
    initial_sigma: tuple = None
    sigma_cap: float = SIGMA_CAP
    sigma_floor: float = 1e-6
    refine: bool = False
    refine_iterations: int = 500

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("Step size must be positive, got {}.".format(self.learning_rate))
        if self.max_iterations < 1:
            raise ValueError("Need at least one iteration, got {}.".format(self.max_iterations))
        if self.init not in ("auto", "ones"):
            raise ValueError("Unknown sigma initialization rule '{}'.".format(self.init))
        if not 0 < self.sigma_floor < self.sigma_cap:
            raise ValueError("Need 0 < sigma_floor < sigma_cap.")

    @classmethod
    def from_dict(cls, config):
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(config) - fields
        if unknown:
            raise ValueError("Unknown optimizer options: {}.".format(", ".join(sorted(unknown))))
        return cls(**config)

    def starting_sigma(self, noise):
        if self.initial_sigma is not None:
            return noise.check_sigma(np.array(self.initial_sigma, dtype=float))
        if self.init == "ones":
            return np.ones(noise.n_con)
        return noise.initial_sigma()


@dataclasses.dataclass(frozen=True, eq=False)
class BoundCertificate:
    value: float
    sigma: np.ndarray
    beta: float
    mu: np.ndarray
    cov: np.ndarray
    grad_norm: float
    iterations: int
    status: str
    at_cap: np.ndarray
    x: np.ndarray
    h: np.ndarray
    initial_value: float = float("nan")

    def recompute(self):
        return float(self.h @ self.mu + self.beta * np.sqrt(max(self.h @ self.cov @ self.h, 0.0)))

    def to_dict(self):
        return dict(value=float(self.value), sigma=self.sigma.tolist(), beta=float(self.beta),
                    mu=self.mu.tolist(), cov=self.cov.tolist(), grad_norm=float(self.grad_norm),
                    iterations=int(self.iterations), status=self.status, at_cap=self.at_cap.tolist(),
                    x=self.x.tolist(), h=self.h.tolist(), initial_value=float(self.initial_value))


class DualObjective:
    """f_bar as a function of sigma for one (x, h) query; cross-covariances are computed once."""

    def __init__(self, problem, query, cap=SIGMA_CAP):
        self.problem = problem
        self.h = query.h
        self.cap = cap
        self.cross = problem.cross_covariance(query.x)
        self.prior = problem.prior_covariance(query.x)

    def sigma_from_log(self, z, upper):
        return np.where(z >= upper, self.cap, np.exp(z))

    def evaluate(self, sigma, gradient=False):
        """Returns (value, d value / d log sigma or None, factorization, mu, cov, beta)."""
        fact = factorize(self.problem, sigma, cap=self.cap)
        mu, cov = fact.predict(self.cross, self.prior)
        beta = beta_sigma(fact)
        h = self.h
        tau = np.sqrt(max(h @ cov @ h, 0.0))
        value = float(h @ mu + beta * tau)
        if not gradient:
            return value, None, fact, mu, cov, beta

        if beta == 0.0:
            raise BoundaryConditionError("Gradient undefined where beta_sigma = 0 (sigma = {}).".format(fact.sigma))

        noise = self.problem.noise
        u = fact.noise_residual
        g = fact.noise_map(self.cross.T @ h)
        d_budget = noise.gammas ** 2 - noise.quadratic_forms(u)
        d_value = noise.cross_forms(g, u) + tau * d_budget / (2.0 * beta)
        if tau > 0:
            d_value = d_value - beta * noise.quadratic_forms(g) / (2.0 * tau)
        # Chain rule through s_j = sigma_j^-2.
        log_gradient = -2.0 * fact.sigma ** -2.0 * d_value
        return value, log_gradient, fact, mu, cov, beta


def dual_value(problem, query, sigma, cap=SIGMA_CAP):
    value, _, _, _, _, _ = DualObjective(problem, query, cap).evaluate(sigma)
    return value


def dual_value_and_log_gradient(problem, query, sigma, cap=SIGMA_CAP):
    value, log_gradient, _, _, _, _ = DualObjective(problem, query, cap).evaluate(sigma, gradient=True)
    return value, log_gradient


def dual_gradient(problem, query, sigma, cap=SIGMA_CAP):
    """d f_bar / d sigma."""
    sigma = problem.noise.check_sigma(sigma)
    _, log_gradient = dual_value_and_log_gradient(problem, query, sigma, cap)
    return log_gradient / sigma


def projected_gradient(gradient, z, lower, upper):
    pg = gradient.copy()
    pg[(z >= upper) & (gradient < 0)] = 0.0
    pg[(z <= lower) & (gradient > 0)] = 0.0
    return pg


def initial_sigma(objective, opts, log_fn=lambda _, **_kwargs: None):
    """Starting point; doubled while the beta radicand is negative."""
    sigma = opts.starting_sigma(objective.problem.noise)
    probes = 0
    while True:
        try:
            objective.evaluate(sigma)
            break
        except InfeasibleProblemError as error:
            probes += 1
            sigma = 2.0 * sigma
            if np.all(sigma >= opts.sigma_cap):
                raise InfeasibleProblemError(
                    "Beta radicand negative for all {} probed sigma below the cap.".format(probes),
                    radicand=error.radicand, sigma=error.sigma)
            sigma = np.minimum(sigma, opts.sigma_cap)
    if probes:
        log_fn("negative radicand at initialization", probes=probes, sigma=sigma.tolist())
    return sigma


def optimize_bound(problem, query, opts=None, log_fn=lambda _, **_kwargs: None):
    opts = opts or OptimizerOptions()
    scale = query.norm
    unit = BoundQuery(x=query.x, h=query.h / scale)
    objective = DualObjective(problem, unit, cap=opts.sigma_cap)
    n_con = problem.noise.n_con

    def certificate(sigma, grad_norm, iterations, status, initial_value):
        value, _, fact, mu, cov, beta = objective.evaluate(sigma)
        return BoundCertificate(value=scale * value, sigma=fact.sigma, beta=beta, mu=mu, cov=cov,
                                grad_norm=scale * grad_norm, iterations=iterations, status=status,
                                at_cap=~fact.active, x=query.x, h=query.h, initial_value=scale * initial_value)

    if problem.n == 0:
        # Without data the infimum is the prior bound, attained as sigma -> infinity.
        sigma = np.full(n_con, opts.sigma_cap)
        prior_value, _, _, _, _, _ = objective.evaluate(sigma)
        return certificate(sigma, 0.0, 0, "boundary-limit" if n_con else "converged", prior_value)

    upper = np.log(opts.sigma_cap)
    sigma0 = initial_sigma(objective, opts, log_fn=log_fn)
    z = np.log(sigma0)
    lower = np.minimum(np.log(opts.sigma_floor), z)

    def value_and_gradient(z):
        value, gradient, _, _, _, _ = objective.evaluate(objective.sigma_from_log(z, upper), gradient=True)
        return value, gradient

    value, gradient = value_and_gradient(z)
    initial_value = value
    pg = projected_gradient(gradient, z, lower, upper)
    best = (value, z.copy(), np.linalg.norm(pg))
    tolerance = opts.gradient_tolerance

    m = np.zeros_like(z)
    v = np.zeros_like(z)
    iterations = 0

    def is_stationary(value, grad_norm):
        return grad_norm <= tolerance * max(abs(value), np.finfo(float).tiny)

    converged = is_stationary(value, best[2])
    while not converged and iterations < opts.max_iterations:
        iterations += 1
        m = opts.beta1 * m + (1.0 - opts.beta1) * pg
        v = opts.beta2 * v + (1.0 - opts.beta2) * pg ** 2
        m_hat = m / (1.0 - opts.beta1 ** iterations)
        v_hat = v / (1.0 - opts.beta2 ** iterations)
        z = np.clip(z - opts.learning_rate * m_hat / (np.sqrt(v_hat) + opts.epsilon), lower, upper)

        try:
            value, gradient = value_and_gradient(z)
        except BoundaryConditionError as error:
            log_fn("scaling factor vanished, keeping best iterate", iterations=iterations, error=str(error))
            break
        pg = projected_gradient(gradient, z, lower, upper)
        grad_norm = np.linalg.norm(pg)
        converged = is_stationary(value, grad_norm)
        if value < best[0]:
            best = (value, z.copy(), grad_norm)

    if opts.refine and not is_stationary(best[0], best[2]):
        try:
            result = scipy.optimize.minimize(value_and_gradient, best[1], jac=True, method="L-BFGS-B",
                                             bounds=list(zip(lower, np.full(n_con, upper))),
                                             options=dict(maxiter=opts.refine_iterations, ftol=1e-15, gtol=1e-14))
            refined_value, refined_gradient = value_and_gradient(result.x)
        except BoundaryConditionError as error:
            log_fn("scaling factor vanished during refinement, keeping best iterate", error=str(error))
        else:
            if refined_value <= best[0]:
                grad_norm = np.linalg.norm(projected_gradient(refined_gradient, result.x, lower, upper))
                best = (refined_value, result.x.copy(), grad_norm)
            iterations += result.nit

    best_value, best_z, best_grad_norm = best
    stationary = is_stationary(best_value, best_grad_norm)
    at_cap = best_z >= upper
    if stationary:
        status = "boundary-limit" if np.any(at_cap) else "converged"
    else:
        status = "iteration-limit"

    result = certificate(objective.sigma_from_log(best_z, upper), best_grad_norm, iterations, status,
                         initial_value)
    log_fn("optimized bound", value=result.value, initial_value=result.initial_value, iterations=iterations,
           status=status, grad_norm=result.grad_norm, n_at_cap=int(np.sum(result.at_cap)))
    return result


@dataclasses.dataclass(frozen=True, eq=False)
class Ellipsoid:
    """{f : (f - center)^T shape^-1 (f - center) <= radius^2}."""

    center: np.ndarray
    shape: np.ndarray
    radius: float

    def __iter__(self):
        return iter((self.center, self.shape, self.radius))

    def mahalanobis(self, f):
        d = np.asarray(f, dtype=float) - self.center
        return float(np.sqrt(max(d @ np.linalg.solve(self.shape, d), 0.0)))

    def contains(self, f, tolerance=1e-8):
        return self.mahalanobis(f) <= self.radius * (1.0 + tolerance) + tolerance

    def support(self, h):
        h = np.asarray(h, dtype=float)
        return float(h @ self.center + self.radius * np.sqrt(max(h @ self.shape @ h, 0.0)))


def ellipsoid_bound(problem, x, sigma, cap=SIGMA_CAP):
    """Joint ellipsoidal containment set of f(x) for fixed sigma."""
    fact = factorize(problem, sigma, cap=cap)
    mu, cov = fact.predict(problem.cross_covariance(x), problem.prior_covariance(x))
    beta = beta_sigma(fact)
    eigenvalues = np.linalg.eigvalsh(cov)
    if eigenvalues[0] <= 1e-12 * max(np.trace(cov), np.finfo(float).tiny):
        raise SingularCovarianceError(
            "Posterior covariance is singular (min. eigenvalue {:.3g}); use directional bounds.".format(
                eigenvalues[0]))
    return Ellipsoid(center=mu, shape=cov, radius=beta)


class Interval(typing.NamedTuple):
    lower: float
    upper: float


def two_sided_interval(problem, x, h, opts=None, log_fn=lambda _, **_kwargs: None):
    query = BoundQuery(x=x, h=h)
    upper = optimize_bound(problem, query, opts, log_fn=log_fn).value
    lower = -optimize_bound(problem, query.reversed(), opts, log_fn=log_fn).value
    return Interval(lower=lower, upper=upper)
