"""
Bounds from the literature for point-wise bounded noise |w_i| <= gamma_i.

All baselines act on the projected training Gram matrix and the projected cross-covariance
along a direction h, so multi-output kernels are handled the same way as scalar ones.
"""

import dataclasses

import numpy as np

from .dual_bound import BoundQuery, dual_value
from .exceptions import InfeasibleProblemError, NonConvergenceError
from .gp_core import factorize, posterior

VARIANTS = ("hashimoto", "yang")


@dataclasses.dataclass(frozen=True)
class UniformNoiseBound:
    gamma_bar: float

    def __post_init__(self):
        if not self.gamma_bar > 0:
            raise ValueError("Uniform noise bound must be positive, got {}.".format(self.gamma_bar))

    @classmethod
    def from_noise_model(cls, noise):
        require_pointwise(noise)
        return cls(gamma_bar=float(np.max(noise.gammas)))


@dataclasses.dataclass(frozen=True)
class Envelope:
    """center +/- half_width along h, computed at the fixed noise parameters sigma."""

    center: float
    half_width: float
    sigma: np.ndarray = None

    @property
    def lower(self):
        return self.center - self.half_width

    @property
    def upper(self):
        return self.center + self.half_width


def require_pointwise(noise):
    if not noise.is_pointwise:
        raise ValueError("Baseline requires point-wise bounded noise, got '{}' noise.".format(noise.kind))


def direction_terms(problem, query):
    """(h^T k(x, x) h, K_{1:N,x} h projected by C)."""
    prior = problem.prior_covariance(query.x)
    cross = problem.cross_covariance(query.x)
    return float(query.h @ prior @ query.h), cross.T @ query.h


def quadratic_term(gram, prior_term, v, nu):
    """||k(., x) h - sum_i nu_i k(., x_i) c_i||^2 in the RKHS."""
    return prior_term + nu @ gram @ nu - 2.0 * v @ nu


def scharnhorst_dual_value(problem, query, nu, lam):
    if not lam > 0:
        raise ValueError("Multiplier lambda must be positive, got {}.".format(lam))
    require_pointwise(problem.noise)
    nu = np.asarray(nu, dtype=float)
    prior_term, v = direction_terms(problem, query)
    c = quadratic_term(problem.training_gram, prior_term, v, nu)
    return float(problem.y @ nu + problem.noise.gammas @ np.abs(nu) + lam * problem.gamma_f ** 2 + c / (4.0 * lam))


@dataclasses.dataclass(frozen=True, eq=False)
class AlternatingResult:
    value: float
    nu: np.ndarray
    lam: float
    iterations: int
    trace: list
    status: str


def soft_threshold(x, thresholds):
    return np.sign(x) * np.maximum(np.abs(x) - thresholds, 0.0)


def nu_step(gram, y, gammas, v, lam, nu0, objective, tol=1e-10, max_iter=500):
    """Monotone FISTA on y^T nu + ||gammas * nu||_1 + (nu^T G nu - 2 v^T nu) / (4 lam)."""
    L = max(np.linalg.eigvalsh(gram)[-1] / (2.0 * lam), np.finfo(float).tiny)
    nu, best = nu0.copy(), objective(nu0)
    z, t = nu.copy(), 1.0
    for _ in range(max_iter):
        gradient = y + (gram @ z - v) / (2.0 * lam)
        candidate = soft_threshold(z - gradient / L, gammas / L)
        value = objective(candidate)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        previous = nu
        if value <= best:
            nu, improvement, best = candidate, best - value, value
        else:
            improvement = 0.0
        z = nu + (t / t_next) * (candidate - nu) + ((t - 1.0) / t_next) * (nu - previous)
        t = t_next
        if value <= best and improvement <= tol * max(abs(best), 1.0) and np.max(np.abs(candidate - previous)) <= tol:
            break
    return nu, best


def scharnhorst_alternating(problem, query, tol=1e-6, max_iter=1000, stop_value=None, inner_iterations=500,
                            log_fn=lambda _, **_kwargs: None):
    """Alternate the closed-form lambda step with a 1-norm regularized quadratic step in nu.

    Every iterate is dual feasible, so each objective value in the trace is a valid bound.
    Stops on relative decrease below tol, when the bound reaches stop_value, or after max_iter.
    """
    require_pointwise(problem.noise)
    gram, y, gammas = problem.training_gram, problem.y, problem.noise.gammas
    gamma_f = problem.gamma_f
    prior_term, v = direction_terms(problem, query)

    def objective_at(nu, lam):
        c = quadratic_term(gram, prior_term, v, nu)
        return y @ nu + gammas @ np.abs(nu) + lam * gamma_f ** 2 + c / (4.0 * lam)

    def lam_step(nu):
        c = max(quadratic_term(gram, prior_term, v, nu), 0.0)
        return max(np.sqrt(c) / (2.0 * gamma_f), np.finfo(float).tiny)

    nu = np.zeros(problem.n)
    lam = lam_step(nu)
    value = objective_at(nu, lam)
    trace = [float(value)]
    status = "iteration-limit"
    iterations = 0
    if problem.n == 0:
        status = "converged"

    while iterations < max_iter and problem.n > 0:
        iterations += 1
        nu, _ = nu_step(gram, y, gammas, v, lam, nu, lambda candidate: objective_at(candidate, lam),
                        tol=tol * 1e-2, max_iter=inner_iterations)
        lam = lam_step(nu)
        new_value = objective_at(nu, lam)
        if new_value > value + 1e-12 * max(abs(value), 1.0):
            raise NonConvergenceError("Alternating objective increased from {:.12g} to {:.12g}.".format(
                value, new_value), iterations=iterations, residual=new_value - value)
        decrease = value - new_value
        value = new_value
        trace.append(float(value))
        if stop_value is not None and value <= stop_value:
            status = "target-reached"
            break
        if decrease <= tol * max(abs(value), np.finfo(float).tiny):
            status = "converged"
            break

    log_fn("alternating bound", value=float(value), iterations=iterations, status=status)
    return AlternatingResult(value=float(value), nu=nu, lam=float(lam), iterations=iterations, trace=trace,
                             status=status)


def fixed_sigma(problem, variant):
    if variant not in VARIANTS:
        raise ValueError("Unknown fixed-sigma variant '{}' (expected one of {}).".format(variant, VARIANTS))
    factor = 1.0 if variant == "hashimoto" else np.sqrt(problem.n)
    return factor * problem.noise.gammas


def fixed_sigma_bound(problem, x, variant="hashimoto", h=1.0):
    """Closed-form bound at sigma_i = gamma_i (hashimoto) or sqrt(N) gamma_i (yang)."""
    require_pointwise(problem.noise)
    sigma = fixed_sigma(problem, variant)
    query = BoundQuery(x=x, h=h)
    upper = dual_value(problem, query, sigma)
    lower = -dual_value(problem, query.reversed(), sigma)
    return Envelope(center=0.5 * (upper + lower), half_width=0.5 * (upper - lower), sigma=sigma)


def box_qp(M, c, lower, upper, x0=None, tol=1e-8, max_iter=10000, memory=10):
    """Minimize x^T M x / 2 + c^T x over lower <= x <= upper.

    Spectral projected gradient: Barzilai-Borwein steps with a nonmonotone Armijo safeguard
    over the last `memory` objective values.
    """
    M, c = np.asarray(M, dtype=float), np.asarray(c, dtype=float)
    lower, upper = np.broadcast_to(lower, c.shape).astype(float), np.broadcast_to(upper, c.shape).astype(float)
    if np.any(lower > upper):
        raise ValueError("Empty box: lower bound exceeds upper bound.")

    def objective(x):
        return 0.5 * x @ M @ x + c @ x

    x = np.clip(np.zeros_like(c) if x0 is None else np.asarray(x0, dtype=float), lower, upper)
    gradient = M @ x + c
    history = [objective(x)]
    alpha = 1.0 / max(np.max(np.abs(np.diag(M))) if M.size else 1.0, np.finfo(float).tiny)
    scale = 1.0 + np.max(np.abs(c)) if c.size else 1.0

    for _ in range(max_iter):
        if np.max(np.abs(np.clip(x - gradient, lower, upper) - x), initial=0.0) <= tol * scale:
            return x
        d = np.clip(x - alpha * gradient, lower, upper) - x
        reference = max(history[-memory:])
        step = 1.0
        while True:
            candidate = x + step * d
            value = objective(candidate)
            if value <= reference + 1e-4 * step * gradient @ d or step < 1e-12:
                break
            step *= 0.5
        new_gradient = M @ candidate + c
        s, r = candidate - x, new_gradient - gradient
        sr = s @ r
        alpha = np.clip(s @ s / sr, 1e-12, 1e12) if sr > 0 else 1e12
        x, gradient = candidate, new_gradient
        history.append(value)

    if np.max(np.abs(np.clip(x - gradient, lower, upper) - x), initial=0.0) > tol * scale:
        raise NonConvergenceError("Box QP did not reach stationarity {:.1e} in {} iterations.".format(tol, max_iter),
                                  iterations=max_iter)
    return x


def reed_bound(problem, x, sigma_bar=None, h=1.0, tol=1e-8):
    """Split bound: interpolation error at sigma_bar plus a worst-case noise propagation term."""
    require_pointwise(problem.noise)
    gammas = problem.noise.gammas
    if sigma_bar is None:
        sigma_bar = UniformNoiseBound.from_noise_model(problem.noise).gamma_bar if problem.n else 1.0
    if not sigma_bar > 0:
        raise ValueError("sigma_bar must be positive, got {}.".format(sigma_bar))
    sigma = np.full(problem.noise.n_con, float(sigma_bar))
    query = BoundQuery(x=x, h=h)

    fact = factorize(problem, sigma)
    mu, cov = posterior(fact, query.x)
    y = problem.y
    if problem.n:
        K_inv = fact.solve(np.eye(problem.n))
        w = box_qp(2.0 * K_inv, -2.0 * K_inv @ y, -gammas, gammas, tol=tol)
        residual = y - w
        fit = float(residual @ K_inv @ residual)
        weights = fact.solve(problem.cross_covariance(query.x).T @ query.h)
    else:
        fit, weights = 0.0, np.zeros(0)
    radicand = problem.gamma_f ** 2 - fit
    if radicand < 0:
        raise InfeasibleProblemError("Reed bound radicand {:.6g} < 0.".format(radicand), radicand=radicand,
                                     sigma=sigma)
    beta_max = np.sqrt(radicand)
    half_width = beta_max * np.sqrt(max(query.h @ cov @ query.h, 0.0)) + float(gammas @ np.abs(weights))
    return Envelope(center=float(query.h @ mu), half_width=float(half_width), sigma=sigma)
