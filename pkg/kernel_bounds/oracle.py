"""
Reference solvers in the finite-dimensional feature space.

Factorizing the Gram matrix on training and test inputs, Phi Phi^T = K, turns the search over
RKHS functions into a search over coefficient vectors theta with ||theta|| <= gamma_f:

    maximize    q^T theta,                       q = Phi_test^T h
    subject to  ||theta||^2 <= gamma_f^2,
                (y - F theta)^T P_j (y - F theta) <= gamma_j^2,   F = C^T Phi_train.

The solver below minimizes the Lagrange dual of this program over the multipliers. Any
nonnegative multiplier vector gives a valid upper bound, so the reported value is the dual
objective at the final iterate.
"""

import dataclasses

import numpy as np
import scipy.linalg as la
import scipy.optimize

from .exceptions import InfeasibleProblemError, NonConvergenceError, SamplerError
from .kernels import as_points, factorize_gram, kernel_matrix, measurement_matrix
from .linalg import jitter_cholesky, symmetrize
from .noise_model import SIGMA_CAP

LIFT_THRESHOLD = 1e-12


def query_arrays(query):
    """(x, h) from a BoundQuery or a plain (x, h) pair; h may be zero here."""
    if hasattr(query, "x") and hasattr(query, "h"):
        x, h = query.x, query.h
    else:
        x, h = query
    return np.atleast_1d(np.asarray(x, dtype=float)), np.atleast_1d(np.asarray(h, dtype=float)).reshape(-1)


def test_matrix(problem, test_points):
    test_points = np.asarray(test_points, dtype=float)
    n_x = problem.inputs.shape[1] if problem.n > 0 else getattr(problem.kernel, "input_dim", None)
    if test_points.ndim == 1 and n_x is not None and n_x > 1:
        test_points = test_points[None, :]
    return as_points(test_points, n_x)


@dataclasses.dataclass(frozen=True, eq=False)
class LiftedProblem:
    F: np.ndarray
    test_blocks: np.ndarray
    y: np.ndarray
    noise: object
    gamma_f: float

    @property
    def rank(self):
        return self.F.shape[1]

    def latent(self, theta):
        """Latent function values at the test points, shape (M, n_f)."""
        return self.test_blocks @ theta

    def residual(self, theta):
        return self.y - self.F @ theta


def lift_problem(problem, test_points, threshold=LIFT_THRESHOLD):
    """Feature-space form of the problem; threshold=None keeps every eigen-direction."""
    T = test_matrix(problem, test_points)
    X = np.vstack([problem.inputs, T]) if problem.n > 0 else T
    K = kernel_matrix(problem.kernel, X, X)
    n_f = problem.output_dim
    phi = factorize_gram(K, output_dim=n_f, threshold=threshold).phi
    m = n_f * problem.n
    F = measurement_matrix(problem.measurements) @ phi[:m] if problem.n > 0 else np.zeros((0, phi.shape[1]))
    test_blocks = phi[m:].reshape(T.shape[0], n_f, phi.shape[1])
    return LiftedProblem(F=F, test_blocks=test_blocks, y=problem.y, noise=problem.noise, gamma_f=problem.gamma_f)


def constraint_margins(lifted, theta):
    """[gamma_f^2 - ||theta||^2, gamma_j^2 - ||y - F theta||^2_{P_j}, ...]."""
    theta = np.asarray(theta, dtype=float)
    return np.concatenate([[lifted.gamma_f ** 2 - theta @ theta], lifted.noise.margins(lifted.residual(theta))])


def constraint_scales(lifted):
    return np.concatenate([[lifted.gamma_f ** 2], lifted.noise.gammas ** 2])


@dataclasses.dataclass(frozen=True, eq=False)
class PrimalSolution:
    value: float
    primal_objective: float
    theta: np.ndarray
    latent: np.ndarray
    multipliers: np.ndarray
    norm_multiplier: float
    max_violation: float
    kkt_residual: float
    iterations: int
    status: str

    def to_dict(self):
        return dict(value=self.value, primal_objective=self.primal_objective, latent=self.latent.tolist(),
                    multipliers=self.multipliers.tolist(), norm_multiplier=self.norm_multiplier,
                    max_violation=self.max_violation, kkt_residual=self.kkt_residual,
                    iterations=self.iterations, status=self.status)


class LagrangeDual:
    """d(lambda) = max_theta L(theta, lambda), with the norm multiplier lambda_0 minimized out.

    For fixed constraint multipliers, H = lambda_0 I + F^T P_lambda F, b = q + 2 F^T P_lambda y and
    the inner maximizer is theta = H^-1 b / 2. lambda_0 solves ||theta(lambda_0)|| = gamma_f
    unless the norm constraint is inactive.
    """

    def __init__(self, lifted, q):
        self.lifted = lifted
        self.q = q
        self.gammas_sq = lifted.noise.gammas ** 2

    def evaluate(self, lam):
        """Returns (d, d d / d lambda, lambda_0, theta)."""
        lifted = self.lifted
        gamma_f_sq = lifted.gamma_f ** 2
        P = lifted.noise.weighted_precision(lam)
        FtP = lifted.F.T @ P
        M = symmetrize(FtP @ lifted.F)
        b = self.q + 2.0 * FtP @ lifted.y
        eigenvalues, V = la.eigh(M)
        eigenvalues = np.clip(eigenvalues, 0.0, None)
        bt = V.T @ b

        def theta_norm_sq(lam0):
            denom = lam0 + eigenvalues
            ratio = np.divide(bt, denom, out=np.zeros_like(bt), where=denom > 0)
            return 0.25 * ratio @ ratio

        def norm_gap(lam0):
            return gamma_f_sq - theta_norm_sq(lam0)

        hi = np.linalg.norm(b) / (2.0 * lifted.gamma_f)
        if hi == 0.0:
            lam0 = 0.0
        elif eigenvalues.size and eigenvalues[0] > 1e-12 * eigenvalues[-1] and theta_norm_sq(0.0) <= gamma_f_sq:
            lam0 = 0.0
        else:
            lo = 1e-14 * hi
            if norm_gap(lo) >= 0:
                lam0 = lo
            else:
                # Round-off can leave the analytic upper end marginally infeasible.
                for _ in range(60):
                    if norm_gap(hi) >= 0:
                        break
                    hi *= 2.0
                else:
                    raise NonConvergenceError("Could not bracket the norm multiplier (upper end {:.3e}).".format(hi))
                lam0 = scipy.optimize.brentq(norm_gap, lo, hi, xtol=1e-16 * hi, rtol=1e-15)

        denom = lam0 + eigenvalues
        coefficients = np.divide(bt, denom, out=np.zeros_like(bt), where=denom > 0)
        theta = 0.5 * V @ coefficients
        value = (0.5 * b @ theta - lifted.y @ P @ lifted.y + lam0 * gamma_f_sq + lam @ self.gammas_sq)
        gradient = self.gammas_sq - lifted.noise.quadratic_forms(lifted.residual(theta))
        return float(value), gradient, lam0, theta


def natural_residual(xs, gradient):
    return np.max(np.abs(xs - np.maximum(xs - gradient, 0.0))) if xs.size else 0.0


def solve_primal(problem, query, tol=1e-8, max_iter=5000, acceptable_tol=1e-4, lifted=None,
                 log_fn=lambda _, **_kwargs: None):
    """Worst-case value of h^T f(x) over all admissible (f, w) pairs.

    Multipliers are optimized in scaled variables x_j = lambda_j gamma_j^2 / lambda_p with
    lambda_p = ||q|| / (2 gamma_f), and the objective is divided by the prior bound; both make
    the problem dimensionless.
    """
    x, h = query_arrays(query)
    n_con = problem.noise.n_con
    lifted = lifted if lifted is not None else lift_problem(problem, x)
    q = lifted.test_blocks[0].T @ h
    q_norm = float(np.linalg.norm(q))

    if q_norm == 0.0:
        theta = np.zeros(lifted.rank)
        margins = constraint_margins(lifted, theta)
        return PrimalSolution(value=0.0, primal_objective=0.0, theta=theta, latent=lifted.latent(theta)[0],
                              multipliers=np.zeros(n_con), norm_multiplier=0.0,
                              max_violation=float(np.max(np.clip(-margins / constraint_scales(lifted), 0, None))),
                              kkt_residual=0.0, iterations=0, status="converged")

    prior = problem.gamma_f * q_norm
    dual = LagrangeDual(lifted, q)
    lam_scale = q_norm / (2.0 * problem.gamma_f) / dual.gammas_sq

    def scaled(xs):
        value, gradient, _, _ = dual.evaluate(xs * lam_scale)
        # Any admissible theta has q^T theta >= -prior, so a lower dual value proves infeasibility.
        if value < -prior * (1.0 + 1e-6):
            raise InfeasibleProblemError(
                "Dual objective {:.6g} below -prior bound {:.6g}: no admissible function explains the data.".format(
                    value, -prior))
        return value / prior, gradient * lam_scale / prior

    xs = np.zeros(n_con)
    iterations = 0
    if n_con:
        result = scipy.optimize.minimize(scaled, xs, jac=True, method="L-BFGS-B", bounds=[(0.0, None)] * n_con,
                                         options=dict(maxiter=max_iter, maxfun=4 * max_iter, ftol=1e-16,
                                                      gtol=1e-13))
        xs = result.x
        iterations = result.nit

        # Projected-gradient polish with backtracking.
        f, g = scaled(xs)
        step = 1.0
        while natural_residual(xs, g) > tol and iterations < 2 * max_iter and step > 1e-16:
            iterations += 1
            candidate = np.maximum(xs - step * g, 0.0)
            f_new, g_new = scaled(candidate)
            if f_new <= f - 1e-4 * g @ (xs - candidate):
                xs, f, g = candidate, f_new, g_new
                step *= 2.0
            else:
                step *= 0.5

    value, gradient, lam0, theta = dual.evaluate(xs * lam_scale)
    kkt = natural_residual(xs, gradient * lam_scale / prior)
    margins = constraint_margins(lifted, theta)
    max_violation = float(np.max(np.clip(-margins / constraint_scales(lifted), 0.0, None)))

    if kkt <= tol:
        status = "converged"
    elif kkt <= acceptable_tol:
        status = "inaccurate"
    else:
        raise NonConvergenceError(
            "Dual multipliers did not converge within {} iterations (KKT residual {:.3g}).".format(iterations, kkt),
            iterations=iterations, residual=kkt)

    log_fn("solved primal", value=value, primal_objective=float(q @ theta), kkt_residual=kkt,
           iterations=iterations, status=status)
    return PrimalSolution(value=value, primal_objective=float(q @ theta), theta=theta,
                          latent=lifted.latent(theta)[0], multipliers=xs * lam_scale, norm_multiplier=lam0,
                          max_violation=max_violation, kkt_residual=kkt, iterations=iterations, status=status)


@dataclasses.dataclass(frozen=True, eq=False)
class RelaxedSolutionWorkspace:
    """Feature-space quantities of the relaxed problem with one aggregated constraint.

    The relaxed constraint ||theta||^2 + sum_j sigma_j^-2 ||y - F theta||^2_{P_j} <= budget
    is the ellipsoid (theta - theta_mu)^T S (theta - theta_mu) <= budget - ||y||^2_{K_hat^-1}.
    """

    q: np.ndarray
    F: np.ndarray
    P: np.ndarray
    S: np.ndarray
    S_cholesky: np.ndarray
    theta_mu: np.ndarray
    budget: float
    y_norm2: float

    @property
    def radicand(self):
        return self.budget - self.y_norm2

    @property
    def q_norm_sq(self):
        """||q||^2_{S^-1}, equal to h^T Sigma_sigma(x) h."""
        t = la.solve_triangular(self.S_cholesky, self.q, lower=True)
        return float(t @ t)

    def xi(self, theta):
        """Shifted coordinate S^(1/2) (theta - theta_mu)."""
        return self.S_cholesky.T @ (np.asarray(theta, dtype=float) - self.theta_mu)

    def check_radicand(self):
        if self.radicand < 0:
            raise InfeasibleProblemError("Relaxed problem is infeasible (radicand {:.6g}).".format(self.radicand),
                                         radicand=self.radicand)

    def optimal_theta(self):
        self.check_radicand()
        direction = la.cho_solve((self.S_cholesky, True), self.q)
        q_norm = np.sqrt(self.q_norm_sq)
        if q_norm == 0.0:
            return self.theta_mu.copy()
        return self.theta_mu + np.sqrt(self.radicand) * direction / q_norm

    def value(self):
        self.check_radicand()
        return float(self.q @ self.theta_mu + np.sqrt(self.radicand) * np.sqrt(self.q_norm_sq))


def relaxed_workspace(problem, query, sigma, cap=SIGMA_CAP, lifted=None):
    x, h = query_arrays(query)
    lifted = lifted if lifted is not None else lift_problem(problem, x, threshold=None)
    noise = problem.noise
    sigma = noise.check_sigma(sigma)
    active = noise.active(sigma, cap)
    inverse_sq = np.where(active, sigma ** -2.0, 0.0)

    q = lifted.test_blocks[0].T @ h
    P = noise.weighted_precision(inverse_sq)
    F = lifted.F
    S = np.eye(lifted.rank) + symmetrize(F.T @ P @ F)
    L, _ = jitter_cholesky(S)
    FtPy = F.T @ (P @ problem.y)
    theta_mu = la.cho_solve((L, True), FtPy)
    y_norm2 = float(problem.y @ P @ problem.y - FtPy @ theta_mu)
    budget = problem.gamma_f ** 2 + float(np.sum(noise.gammas ** 2 * inverse_sq))
    return RelaxedSolutionWorkspace(q=q, F=F, P=P, S=S, S_cholesky=L, theta_mu=theta_mu, budget=budget,
                                    y_norm2=max(y_norm2, 0.0))


def relaxed_closed_form(problem, query, sigma, cap=SIGMA_CAP):
    """The dual function evaluated through feature-space algebra."""
    return relaxed_workspace(problem, query, sigma, cap=cap).value()


@dataclasses.dataclass(frozen=True, eq=False)
class FeasibleSample:
    theta: np.ndarray
    noise: np.ndarray
    latent: np.ndarray
    margins: np.ndarray


def feasible_sample(lifted, theta):
    """Wrap theta as a sample; raises SamplerError unless every constraint holds strictly."""
    theta = np.asarray(theta, dtype=float)
    margins = constraint_margins(lifted, theta)
    if not np.all(margins > 0):
        j = int(np.argmin(margins))
        raise SamplerError("Constraint {} violated (margin {:.3g}).".format(j, margins[j]),
                           constraint_index=j, margin=float(margins[j]))
    return FeasibleSample(theta=theta, noise=lifted.residual(theta), latent=lifted.latent(theta), margins=margins)


def margin_jacobian(lifted, theta):
    residual = lifted.residual(theta)
    rows = [-2.0 * theta]
    for support, block in zip(lifted.noise.supports, lifted.noise.blocks):
        rows.append(2.0 * lifted.F[support].T @ (block @ residual[support]))
    return np.array(rows)


def slater_point(lifted, max_iter=500):
    """Strictly feasible theta maximizing the smallest relative constraint margin."""
    scales = constraint_scales(lifted)
    r = lifted.rank

    # Start from the centre of the relaxed ellipsoid at unit-scale noise parameters.
    P = lifted.noise.precision(lifted.noise.initial_sigma()) if lifted.noise.n else np.zeros((0, 0))
    S = np.eye(r) + lifted.F.T @ P @ lifted.F
    theta0 = la.solve(symmetrize(S), lifted.F.T @ (P @ lifted.y), assume_a="pos")
    norm0 = np.linalg.norm(theta0)
    if norm0 >= lifted.gamma_f:
        theta0 *= 0.9 * lifted.gamma_f / norm0

    def relative_margins(z):
        return constraint_margins(lifted, z[:-1]) / scales - z[-1]

    def relative_jacobian(z):
        return np.hstack([margin_jacobian(lifted, z[:-1]) / scales[:, None], -np.ones((scales.size, 1))])

    z0 = np.concatenate([theta0, [np.min(constraint_margins(lifted, theta0) / scales)]])
    result = scipy.optimize.minimize(lambda z: -z[-1], z0, jac=lambda z: np.concatenate([np.zeros(r), [-1.0]]),
                                     method="SLSQP",
                                     constraints=[dict(type="ineq", fun=relative_margins, jac=relative_jacobian)],
                                     options=dict(maxiter=max_iter, ftol=1e-12))

    candidates = [theta0, result.x[:-1]]
    scores = [np.min(constraint_margins(lifted, theta) / scales) for theta in candidates]
    theta = candidates[int(np.argmax(scores))]
    margins = constraint_margins(lifted, theta)
    if not np.all(margins > 0):
        j = int(np.argmin(margins / scales))
        raise SamplerError("No strictly feasible point found; tightest constraint {} (margin {:.3g}).".format(
            j, margins[j]), constraint_index=j, margin=float(margins[j]))
    return theta


def chord(lifted, theta, direction):
    """Interval of t with theta + t * direction strictly feasible (theta must be strictly feasible)."""
    noise = lifted.noise
    residual = lifted.residual(theta)
    e = lifted.F @ direction
    a = np.concatenate([[direction @ direction], noise.quadratic_forms(e)])
    b = np.concatenate([[2.0 * theta @ direction], -2.0 * noise.cross_forms(residual, e)])
    c = -constraint_margins(lifted, theta)

    lo, hi = -np.inf, np.inf
    quadratic = a > 1e-14 * np.max(a)
    disc = np.sqrt(np.clip(b[quadratic] ** 2 - 4.0 * a[quadratic] * c[quadratic], 0.0, None))
    roots_lo = (-b[quadratic] - disc) / (2.0 * a[quadratic])
    roots_hi = (-b[quadratic] + disc) / (2.0 * a[quadratic])
    if roots_lo.size:
        lo, hi = max(lo, roots_lo.max()), min(hi, roots_hi.min())
    linear = ~quadratic & (b != 0)
    for b_j, c_j in zip(b[linear], c[linear]):
        if b_j > 0:
            hi = min(hi, -c_j / b_j)
        else:
            lo = max(lo, -c_j / b_j)
    return lo, hi


def sample_feasible_function(problem, test_points, seed=0, count=1000, method="hit-and-run", burn_in=100, thin=5,
                             max_attempts=100000, lifted=None, log_fn=lambda _, **_kwargs: None):
    """Draw admissible (f, w) pairs; the latent values at test_points come with every sample.

    hit-and-run starts at a Slater point and moves along random chords of the feasible set;
    rejection draws uniformly from the norm ball and keeps what satisfies the noise bounds.
    """
    if method not in ("hit-and-run", "rejection"):
        raise ValueError("Unknown sampling method '{}'.".format(method))
    rng = np.random.default_rng(seed)
    lifted = lifted if lifted is not None else lift_problem(problem, test_points)
    r = lifted.rank

    if method == "hit-and-run":
        try:
            theta = slater_point(lifted)
        except SamplerError:
            if r > 4:
                raise
            method = "rejection"

    samples = []
    if method == "hit-and-run":
        steps = 0
        rejected = 0
        while len(samples) < count:
            direction = rng.standard_normal(r)
            direction /= np.linalg.norm(direction)
            lo, hi = chord(lifted, theta, direction)
            for _ in range(50):
                candidate = theta + rng.uniform(lo, hi) * direction
                if np.all(constraint_margins(lifted, candidate) > 0):
                    theta = candidate
                    break
                rejected += 1
            steps += 1
            if steps > burn_in and (steps - burn_in) % thin == 0:
                samples.append(feasible_sample(lifted, theta))
        log_fn("sampled feasible functions", method=method, count=count, steps=steps, rejected=rejected)
        return samples

    attempts = 0
    best_margins = None
    scales = constraint_scales(lifted)
    while len(samples) < count:
        attempts += 1
        if attempts > max_attempts:
            j = int(np.argmin(best_margins / scales))
            raise SamplerError("Rejection sampler accepted {} of {} draws; tightest constraint {}.".format(
                len(samples), max_attempts, j), constraint_index=j, margin=float(best_margins[j]))
        theta = rng.standard_normal(r)
        theta *= problem.gamma_f * rng.uniform() ** (1.0 / max(r, 1)) / max(np.linalg.norm(theta), 1e-300)
        margins = constraint_margins(lifted, theta)
        if best_margins is None or np.min(margins / scales) > np.min(best_margins / scales):
            best_margins = margins
        if np.all(margins > 0):
            samples.append(feasible_sample(lifted, theta))
    log_fn("sampled feasible functions", method=method, count=count, attempts=attempts)
    return samples
