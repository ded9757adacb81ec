"""
Ellipsoidal bounds on the measurement noise.

Each constraint j reads w^T P_j w < gamma_j^2. Constraints are stored on their support,
i.e. as the index set S_j of measurements they act on together with the dense block
P_j[S_j, S_j]. Point-wise and per-measurement-pair bounds then need O(1) storage each.
"""

import dataclasses

import numpy as np
import scipy.linalg as la

from .exceptions import NotPositiveSemidefiniteError, SingularNoiseCovarianceError
from .linalg import PSD_TOLERANCE, check_symmetric, jitter_cholesky, psd_eigh, symmetrize

# Noise parameters at or above this value drop their constraint from the precision.
SIGMA_CAP = 1e8
# Condition estimate beyond which K^w_sigma counts as singular.
MAX_CONDITION = 1e14

KINDS = ("pointwise", "energy", "general")


@dataclasses.dataclass(frozen=True, eq=False)
class NoiseModel:
    n: int
    supports: tuple
    blocks: tuple
    gammas: np.ndarray
    kind: str = "general"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError("Unknown noise model kind '{}'.".format(self.kind))
        gammas = np.atleast_1d(np.asarray(self.gammas, dtype=float))
        if len(self.supports) != len(self.blocks) or len(self.blocks) != gammas.shape[0]:
            raise ValueError("Got {} supports, {} blocks and {} bounds.".format(
                len(self.supports), len(self.blocks), gammas.shape[0]))
        if np.any(~(gammas > 0)) or np.any(~np.isfinite(gammas)):
            raise ValueError("Noise bounds must be positive and finite, got {}.".format(gammas))

        supports, blocks = [], []
        for j, (support, block) in enumerate(zip(self.supports, self.blocks)):
            support = np.asarray(support, dtype=int).reshape(-1)
            block = np.asarray(block, dtype=float).reshape(support.shape[0], support.shape[0])
            if support.size and (support.min() < 0 or support.max() >= self.n):
                raise ValueError("Constraint {} acts on measurements outside 0..{}.".format(j, self.n - 1))
            if np.unique(support).size != support.size:
                raise ValueError("Constraint {} lists a measurement twice.".format(j))
            block = check_symmetric(block, name="Noise matrix {}".format(j))
            psd_eigh(block, name="Noise matrix {}".format(j))
            supports.append(support)
            blocks.append(symmetrize(block))

        object.__setattr__(self, "supports", tuple(supports))
        object.__setattr__(self, "blocks", tuple(blocks))
        object.__setattr__(self, "gammas", gammas)

        if self.n > 0:
            total = self.weighted_precision(np.ones(self.n_con))
            eigenvalues = la.eigvalsh(total)
            if eigenvalues[0] <= PSD_TOLERANCE * max(eigenvalues[-1], 0.0):
                raise NotPositiveSemidefiniteError(
                    "Sum of noise matrices is not positive definite (min. eigenvalue {:.3g}); "
                    "some noise directions are unbounded.".format(eigenvalues[0]))

    @property
    def n_con(self):
        return len(self.blocks)

    @property
    def is_pointwise(self):
        return self.kind == "pointwise"

    def matrix(self, j):
        """Dense N x N embedding of constraint j."""
        P = np.zeros((self.n, self.n))
        support = self.supports[j]
        P[np.ix_(support, support)] = self.blocks[j]
        return P

    def weighted_precision(self, weights):
        """sum_j weights_j P_j, skipping zero weights."""
        weights = np.asarray(weights, dtype=float)
        P = np.zeros((self.n, self.n))
        for j in np.flatnonzero(weights):
            support = self.supports[j]
            P[np.ix_(support, support)] += weights[j] * self.blocks[j]
        return P

    def cross_forms(self, u, v):
        """u_S^T P_j v_S for every constraint j."""
        u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
        return np.array([u[s] @ B @ v[s] for s, B in zip(self.supports, self.blocks)])

    def quadratic_forms(self, w):
        return self.cross_forms(w, w)

    def margins(self, w):
        return self.gammas ** 2 - self.quadratic_forms(w)

    def contains(self, w):
        return bool(np.all(self.margins(w) > 0))

    def active(self, sigma, cap=SIGMA_CAP):
        return np.asarray(sigma, dtype=float) < cap

    def precision(self, sigma, cap=SIGMA_CAP):
        """P^w_sigma = sum_j sigma_j^-2 P_j over constraints below the cap."""
        sigma = self.check_sigma(sigma)
        weights = np.where(self.active(sigma, cap), sigma ** -2.0, 0.0)
        return self.weighted_precision(weights)

    def check_sigma(self, sigma):
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim == 0:
            sigma = np.full(self.n_con, float(sigma))
        if sigma.shape != (self.n_con,):
            raise ValueError("Expected {} noise parameters, got shape {}.".format(self.n_con, sigma.shape))
        if np.any(~(sigma > 0)):
            raise ValueError("Noise parameters must be positive, got {}.".format(sigma))
        return sigma

    def initial_sigma(self):
        if self.kind in ("pointwise", "energy"):
            return self.gammas.copy()
        return np.ones(self.n_con)

    def box_envelope(self):
        """Half-widths b with |w_i| <= b_i for every admissible noise vector."""
        bounds = np.full(self.n, np.inf)
        for support, block, gamma in zip(self.supports, self.blocks, self.gammas):
            if support.size == 0:
                continue
            pinv = la.pinvh(block)
            # e_i must lie in the range of the block for a finite bound.
            in_range = np.abs(np.diag(block @ pinv) - 1.0) < 1e-8
            local = np.where(in_range, gamma * np.sqrt(np.clip(np.diag(pinv), 0.0, None)), np.inf)
            bounds[support] = np.minimum(bounds[support], local)
        if self.n > 0 and np.any(np.isinf(bounds)):
            total = self.weighted_precision(np.ones(self.n_con))
            aggregate = np.sqrt(np.sum(self.gammas ** 2) * np.diag(la.inv(total)))
            bounds = np.minimum(bounds, aggregate)
        return bounds

    def uniform_bound(self):
        """Smallest uniform point-wise bound implied by the constraints."""
        return float(np.max(self.box_envelope())) if self.n > 0 else 0.0

    def to_dict(self):
        if self.kind == "pointwise":
            return {"pointwise": self.gammas.tolist()}
        if self.kind == "energy":
            return {"energy": {"matrix": self.matrix(0).tolist(), "gamma": float(self.gammas[0])}}
        if all(support.size < self.n for support in self.supports):
            return {"blocks": {"n": self.n, "constraints": [
                {"support": s.tolist(), "matrix": B.tolist(), "gamma": float(g)}
                for s, B, g in zip(self.supports, self.blocks, self.gammas)]}}
        return {"general": [[self.matrix(j).tolist(), float(self.gammas[j])] for j in range(self.n_con)]}


def pointwise_noise(bounds):
    bounds = np.atleast_1d(np.asarray(bounds, dtype=float))
    if np.any(~(bounds > 0)):
        raise ValueError("Point-wise noise bounds must be positive, got {}.".format(bounds))
    n = bounds.shape[0]
    return NoiseModel(n=n, supports=tuple([i] for i in range(n)),
                      blocks=tuple(np.ones((1, 1)) for _ in range(n)),
                      gammas=bounds, kind="pointwise")


def energy_noise(P1, gamma):
    P1 = check_symmetric(np.atleast_2d(np.asarray(P1, dtype=float)), name="Energy noise matrix")
    n = P1.shape[0]
    if n > 0 and la.eigvalsh(P1)[0] <= 0:
        raise NotPositiveSemidefiniteError("Energy noise matrix must be positive definite.")
    return NoiseModel(n=n, supports=(np.arange(n),), blocks=(P1,), gammas=np.array([gamma], dtype=float),
                      kind="energy")


def general_noise(constraints, n=None):
    """Noise model from a list of (N x N matrix, gamma) pairs; supports are detected from nonzero rows."""
    constraints = list(constraints)
    if len(constraints) == 0:
        raise ValueError("A noise model needs at least one constraint.")
    supports, blocks, gammas = [], [], []
    for matrix, gamma in constraints:
        matrix = np.asarray(matrix, dtype=float)
        if matrix.size == 0:
            matrix = matrix.reshape(0, 0)
        if n is None:
            n = matrix.shape[0]
        if matrix.shape != (n, n):
            raise ValueError("Noise matrices must all be {0} x {0}, got {1}.".format(n, matrix.shape))
        support = np.flatnonzero(np.any(matrix != 0, axis=0) | np.any(matrix != 0, axis=1))
        supports.append(support)
        blocks.append(matrix[np.ix_(support, support)])
        gammas.append(gamma)
    return NoiseModel(n=n, supports=tuple(supports), blocks=tuple(blocks), gammas=np.array(gammas, dtype=float),
                      kind="general")


def block_noise(n, supports, blocks, gammas):
    """Noise model from per-constraint supports and dense blocks."""
    return NoiseModel(n=n, supports=tuple(supports), blocks=tuple(blocks),
                      gammas=np.asarray(gammas, dtype=float), kind="general")


def noise_from_dict(config, n=None):
    if "pointwise" in config:
        return pointwise_noise(config["pointwise"])
    if "energy" in config:
        return energy_noise(config["energy"]["matrix"], config["energy"]["gamma"])
    if "general" in config:
        return general_noise([(matrix, gamma) for matrix, gamma in config["general"]], n=n)
    if "blocks" in config:
        constraints = config["blocks"]["constraints"]
        return block_noise(config["blocks"]["n"], [c["support"] for c in constraints],
                           [c["matrix"] for c in constraints], [c["gamma"] for c in constraints])
    raise ValueError("Noise model must be one of 'pointwise', 'energy', 'general' or 'blocks', got keys {}.".format(
        sorted(config.keys())))


def build_Kw_sigma(noise, sigma, cap=SIGMA_CAP):
    """Surrogate noise covariance K^w_sigma = (sum_j sigma_j^-2 P_j)^-1 and its inverse.

    Returns:
        (K_w, P_w), both symmetric positive definite.
    """
    sigma = noise.check_sigma(sigma)
    P_w = noise.precision(sigma, cap=cap)
    if noise.n == 0:
        return np.zeros((0, 0)), P_w

    if not np.all(noise.active(sigma, cap)):
        raise SingularNoiseCovarianceError(
            "Noise parameters at the cap ({:.0e}) leave K^w_sigma unbounded.".format(cap))

    if noise.kind == "pointwise":
        variances = np.zeros(noise.n)
        for support, block, s in zip(noise.supports, noise.blocks, sigma):
            variances[support] = s ** 2 / block[0, 0]
        if variances.max() / variances.min() > MAX_CONDITION:
            raise SingularNoiseCovarianceError("K^w_sigma is numerically singular.")
        return np.diag(variances), P_w

    if np.linalg.cond(P_w) > MAX_CONDITION:
        raise SingularNoiseCovarianceError("K^w_sigma is numerically singular (condition > {:.0e}).".format(
            MAX_CONDITION))

    if noise.kind == "energy":
        return sigma[0] ** 2 * symmetrize(la.inv(noise.blocks[0])), P_w

    L, _ = jitter_cholesky(P_w)
    K_w = la.cho_solve((L, True), np.eye(noise.n))
    return symmetrize(K_w), P_w
