"""Small numerical helpers used across modules."""
import numpy as np

from .exceptions import DegenerateCorrelationError, NumericalError


def as_rng(seed):
    """Return a ``numpy.random.Generator`` from a seed, SeedSequence or Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def correlation(A, ddof=1):
    """Empirical correlation among the columns of a ``T x Q`` matrix.

    Raises
    ------
    DegenerateCorrelationError
        If any column has zero variance.
    """
    A = np.asarray(A, dtype=float)
    Ac = A - A.mean(axis=0)
    sd = np.sqrt((Ac**2).sum(axis=0))
    if np.any(sd <= 0):
        bad = int(np.flatnonzero(sd <= 0)[0])
        raise DegenerateCorrelationError(f"column {bad} has zero variance")
    Z = Ac / sd
    C = Z.T @ Z
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 1.0)
    return C


def batch_correlation(A):
    """Correlation of each ``T x Q`` slice in a ``(K, T, Q)`` stack."""
    Ac = A - A.mean(axis=1, keepdims=True)
    cov = np.einsum("ktq,ktr->kqr", Ac, Ac)
    d = np.sqrt(np.einsum("kqq->kq", cov))
    C = cov / (d[:, :, None] * d[:, None, :])
    C = 0.5 * (C + np.swapaxes(C, 1, 2))
    idx = np.arange(C.shape[1])
    C[:, idx, idx] = 1.0
    return C


def cov_to_cor(S):
    """Rescale a covariance matrix to unit diagonal."""
    d = np.sqrt(np.diag(S))
    C = S / np.outer(d, d)
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 1.0)
    return C


def is_correlation(X, tol=1e-10):
    """Check symmetry, unit diagonal and positive definiteness."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1] or not np.all(np.isfinite(X)):
        return False
    if np.max(np.abs(X - X.T)) > tol:
        return False
    if np.max(np.abs(np.diag(X) - 1.0)) > tol:
        return False
    return bool(np.linalg.eigvalsh(X)[0] > 0)


def cholesky_jitter(X, jitter=1e-10, what="matrix"):
    """Cholesky factor, retrying once with ``jitter * I`` added."""
    try:
        return np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(X + jitter * np.eye(X.shape[0]))
    except np.linalg.LinAlgError:
        raise NumericalError(f"{what} is not positive definite") from None


def sym(X):
    """Symmetric part of a square matrix or of each matrix in a stack."""
    return 0.5 * (X + np.swapaxes(X, -1, -2))


def offdiag_mask(Q):
    return ~np.eye(Q, dtype=bool)


def upper_pairs(Q):
    """Row and column indices of the strict upper triangle."""
    return np.triu_indices(Q, k=1)
