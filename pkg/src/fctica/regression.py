"""Dual regression and EM template ICA.

These are the two point estimators used as baselines, to build the
population templates, and to initialize the variational algorithms.
Data matrices are ``T x V`` arrays (time by location); spatial maps are
``Q x V`` and mixing matrices ``T x Q``.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError, SingularDesignError

logger = logging.getLogger(__name__)

SINGULAR_RTOL = 1e-10


def center_rows(Y_raw):
    """Remove the temporal mean from every location's time course.

    Each column of the returned ``T x V`` matrix (one location observed
    over time) has mean zero.

    Raises
    ------
    DataError
        If ``T < 2`` or any entry is not finite; the message names the
        first offending ``(t, v)`` index.
    """
    Y = np.array(Y_raw, dtype=float, copy=True)
    if Y.ndim != 2:
        raise DataError(f"expected a T x V matrix, got shape {Y.shape}")
    if Y.shape[0] < 2:
        raise DataError("need at least two time points to center")
    bad = ~np.isfinite(Y)
    if bad.any():
        t, v = np.argwhere(bad)[0]
        raise DataError(f"non-finite entry {Y[t, v]!r} at (t={t}, v={v})")
    Y -= Y.mean(axis=0)
    return Y


@dataclass
class RegressionFit:
    """Point estimates of the mixing matrix, sources and noise variance."""

    A_hat: np.ndarray
    S_hat: np.ndarray
    tau2_hat: float


@dataclass
class TicaFit(RegressionFit):
    """EM template ICA result, carrying the posterior moments of the sources."""

    S_cov: np.ndarray = None
    ESS_S: np.ndarray = None
    converged: bool = False
    n_iter: int = 0
    changes: list = field(default_factory=list)


def _lstsq(X, B, what):
    """Least-squares solution of ``X @ beta = B`` with a rank check on ``X``."""
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    if s.size == 0 or s[-1] < SINGULAR_RTOL * s[0]:
        smin = s[-1] if s.size else 0.0
        raise SingularDesignError(
            f"{what} is rank deficient (smallest/largest singular value "
            f"{smin / s[0] if s.size and s[0] > 0 else 0.0:.3g})"
        )
    return Vt.T @ ((U.T @ B) / s[:, None])


def rescale_unit_variance(A, S):
    """Scale columns of ``A`` to unit sample variance, compensating in ``S``.

    Returns ``(A_scaled, S_scaled, sd)`` where ``sd`` holds the original
    column standard deviations; ``A_scaled @ S_scaled == A @ S`` up to
    rounding.
    """
    sd = A.std(axis=0, ddof=1)
    if np.any(sd <= 0):
        raise SingularDesignError("mixing matrix has a zero-variance column")
    return A / sd, S * sd[:, None], sd


def _positive_tau2(rss, n, Y):
    floor = max(1e-12 * float(np.mean(Y**2)), np.finfo(float).tiny)
    return max(rss / n, floor)


def dual_regression(Y, S0):
    """Two-stage least squares of data on group maps.

    Parameters
    ----------
    Y : (T, V) array
        Centered data.
    S0 : (Q, V) array
        Group-level spatial maps, rank ``Q``.

    Returns
    -------
    RegressionFit
        ``A_hat`` has unit-variance columns; ``S_hat`` rows carry the
        compensating scale so ``A_hat @ S_hat`` is the unscaled fit.
    """
    Y = np.asarray(Y, dtype=float)
    S0 = np.atleast_2d(np.asarray(S0, dtype=float))
    if S0.shape[1] != Y.shape[1]:
        raise DataError(f"group maps have V={S0.shape[1]}, data has V={Y.shape[1]}")
    # temporal regression: Y^T ~ S0^T A^T
    A = _lstsq(S0.T, Y.T, "group maps").T
    # spatial regression: Y ~ A S
    S = _lstsq(A, Y, "dual-regression time courses")
    A, S, _ = rescale_unit_variance(A, S)
    rss = float(np.sum((Y - A @ S) ** 2))
    return RegressionFit(A_hat=A, S_hat=S, tau2_hat=_positive_tau2(rss, Y.size, Y))


def source_posterior(Y, A_hat, AtA, tau2, template):
    """Gaussian posterior of each source column ``s_v``.

    ``cov_v = (AtA / tau2 + D_v^{-1})^{-1}`` and
    ``mean_v = cov_v (A_hat^T y_v / tau2 + D_v^{-1} s0_v)``.

    Returns ``(S_hat, S_cov)`` with shapes ``(Q, V)`` and ``(V, Q, Q)``.
    """
    prior_prec = 1.0 / template.var  # (Q, V)
    Q, V = prior_prec.shape
    prec = np.broadcast_to(AtA / tau2, (V, Q, Q)).copy()
    idx = np.arange(Q)
    prec[:, idx, idx] += prior_prec.T
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    rhs = (A_hat.T @ Y) / tau2 + prior_prec * template.mean  # (Q, V)
    S_hat = np.einsum("vqr,rv->qv", cov, rhs)
    return S_hat, cov


def expected_nll(Y, A, tau2, S_hat, ESS_S):
    """Expected complete-data negative log-likelihood of ``Y`` (up to constants).

    The expectation is over the source posterior summarized by ``S_hat``
    and ``ESS_S = sum_v E[s_v s_v^T]``.
    """
    T, V = Y.shape
    ssr = (
        np.sum(Y**2)
        - 2.0 * np.sum((Y @ S_hat.T) * A)
        + np.trace(A.T @ A @ ESS_S)
    )
    return 0.5 * T * V * np.log(tau2) + 0.5 * ssr / tau2


def relative_change(old, new):
    """Largest block-wise relative change ``||new - old|| / (||new|| + 1e-8)``."""
    out = 0.0
    for a, b in zip(old, new):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        out = max(out, float(np.linalg.norm(b - a) / (np.linalg.norm(b) + 1e-8)))
    return out


def tica_em(Y, template, max_iter=100, tol=1e-3, group_maps=None):
    """EM template ICA with the mixing matrix treated as a parameter.

    The E-step is the Gaussian posterior of each ``s_v`` given the current
    ``A_hat`` and ``tau2``; the M-step updates ``A_hat`` by least squares
    against the expected sources and ``tau2`` from the expected residual.
    ``A_hat`` columns are rescaled to unit variance after every M-step.

    Parameters
    ----------
    Y : (T, V) array
    template : SpatialTemplate
    max_iter : int
        ``0`` returns the dual-regression initialization unchanged.
    tol : float
        Stop when :func:`relative_change` of ``(A, S, tau2)`` drops below it.
    group_maps : (Q, V) array, optional
        Maps used for the dual-regression initialization; defaults to the
        template mean.
    """
    if tol <= 0:
        raise DataError("tol must be positive")
    Y = np.asarray(Y, dtype=float)
    if template.mean.shape[1] != Y.shape[1]:
        raise DataError("template and data disagree on V")
    T, V = Y.shape
    init = dual_regression(Y, template.mean if group_maps is None else group_maps)
    A, S, tau2 = init.A_hat, init.S_hat, init.tau2_hat
    Q = A.shape[1]
    S_cov = np.zeros((V, Q, Q))
    ESS = S @ S.T
    fit = TicaFit(A, S, tau2, S_cov=S_cov, ESS_S=ESS)
    if max_iter == 0:
        return fit

    sumsq = float(np.sum(Y**2))
    changes = []
    converged = False
    for it in range(1, max_iter + 1):
        S_new, S_cov = source_posterior(Y, A, A.T @ A, tau2, template)
        ESS = S_cov.sum(axis=0) + S_new @ S_new.T
        YS = Y @ S_new.T
        A_new = np.linalg.solve(ESS, YS.T).T
        rss = sumsq - 2.0 * np.sum(YS * A_new) + np.trace(A_new.T @ A_new @ ESS)
        tau2_new = _positive_tau2(rss, T * V, Y)
        A_new, S_new, sd = rescale_unit_variance(A_new, S_new)
        S_cov = S_cov * np.outer(sd, sd)
        ESS = ESS * np.outer(sd, sd)
        change = relative_change((A, S, tau2), (A_new, S_new, tau2_new))
        changes.append(change)
        A, S, tau2 = A_new, S_new, tau2_new
        logger.debug("tica iter %d change %.3g tau2 %.4g", it, change, tau2)
        if change < tol:
            converged = True
            break
    if not converged:
        logger.warning("template ICA did not converge in %d iterations", max_iter)
    return TicaFit(
        A, S, tau2, S_cov=S_cov, ESS_S=ESS,
        converged=converged, n_iter=it, changes=changes,
    )
