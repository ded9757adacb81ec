""" Linear algebra helpers shared by the kernel, GP and oracle modules. """

import numpy as np
import scipy.linalg as la

from .exceptions import NotPositiveSemidefiniteError

# Relative tolerance for eigenvalues of nominally PSD matrices.
PSD_TOLERANCE = 1e-10


def symmetrize(A):
    return 0.5 * (A + A.T)


def check_symmetric(A, tolerance=PSD_TOLERANCE, name="matrix"):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("{} must be square, got shape {}.".format(name, A.shape))
    asymmetry = np.max(np.abs(A - A.T)) if A.size else 0.0
    scale = np.max(np.abs(A)) if A.size else 0.0
    if asymmetry > tolerance * (1.0 + scale):
        raise ValueError("{} is not symmetric (max. asymmetry {:.3g}).".format(name, asymmetry))
    return A


def jitter_cholesky(A, lower=True, max_relative_jitter=1e-3):
    """ Cholesky factor of A, adding diagonal jitter if needs be.

        The first attempt is unperturbed; afterwards the jitter starts at
        1e-10 * trace / dim and grows tenfold until the factorization succeeds
        or the jitter exceeds max_relative_jitter times the mean diagonal.

        Returns:
            (L, jitter): the triangular factor and the jitter that was added.
    """
    A = np.asarray(A, dtype=float)
    D = A.shape[0]
    if D == 0:
        return np.zeros((0, 0)), 0.0

    try:
        return la.cholesky(A, lower=lower), 0.0
    except la.LinAlgError:
        pass

    di = np.diag_indices(D)
    Amean = max(abs(A.diagonal().mean()), np.finfo(float).tiny)
    jit = PSD_TOLERANCE * abs(np.trace(A)) / D
    if jit <= 0.0:
        jit = PSD_TOLERANCE * Amean

    while jit < max_relative_jitter * Amean:
        try:
            Ajit = A.copy()
            Ajit[di] += jit
            return la.cholesky(Ajit, lower=lower), jit
        except la.LinAlgError:
            jit *= 10

    raise NotPositiveSemidefiniteError("Added maximum jitter and matrix still not positive definite.")


def psd_eigh(A, name="matrix"):
    """Eigendecomposition of a symmetric PSD matrix with a relative negativity check."""
    A = check_symmetric(A, name=name)
    if A.shape[0] == 0:
        return np.zeros(0), np.zeros((0, 0))
    eigenvalues, eigenvectors = la.eigh(symmetrize(A))
    scale = np.max(np.abs(eigenvalues))
    if eigenvalues[0] < -PSD_TOLERANCE * max(scale, np.finfo(float).tiny):
        raise NotPositiveSemidefiniteError(
            "{} has eigenvalue {:.3g} below -{:.0e} * norm ({:.3g}).".format(
                name, eigenvalues[0], PSD_TOLERANCE, scale))
    return eigenvalues, eigenvectors


def psd_factor(A, threshold=None, name="matrix"):
    """Return F with F F^T = A.

    With threshold=None every eigenvalue is kept (negative round-off clipped to zero),
    so F is square. Otherwise eigenvalues below threshold * max eigenvalue are dropped
    and F has full column rank.
    """
    eigenvalues, eigenvectors = psd_eigh(A, name=name)
    if eigenvalues.size == 0:
        return np.zeros((0, 0))
    if threshold is None:
        return eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))
    keep = eigenvalues > threshold * max(eigenvalues[-1], 0.0)
    if eigenvalues[-1] <= 0.0:
        keep[:] = False
    # Largest eigenvalue first.
    keep_idx = np.flatnonzero(keep)[::-1]
    return eigenvectors[:, keep_idx] * np.sqrt(eigenvalues[keep_idx])


def min_eigenvalue(A):
    if A.shape[0] == 0:
        return np.inf
    return la.eigvalsh(symmetrize(A))[0]
