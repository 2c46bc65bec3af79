"""Posterior samples of the mixing matrix and FC credible intervals."""
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from ._utils import as_rng, batch_correlation, correlation
from .exceptions import DataError, NumericalError
from .fc_prior import FcSampleSet, IwPrior
from .vb import draw_u, vb1_precisions

logger = logging.getLogger(__name__)

CHUNK = 256


@dataclass
class FcPosterior:
    mean: np.ndarray
    median: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    significant: np.ndarray
    level: float
    samples: np.ndarray = None

    @property
    def width(self):
        return self.ci_hi - self.ci_lo


def _conditional_moments(fit, Y, P):
    """Per-sample covariances ``V_k`` and the regression targets ``B``."""
    s = fit.state
    E = s.ESS_S / s.tau2_hat
    E = 0.5 * (E + E.T)
    B = (Y @ s.S_hat.T) / s.tau2_hat
    Vk = np.linalg.inv(E + P)
    return 0.5 * (Vk + np.swapaxes(Vk, 1, 2)), B


def _batch_cholesky(Vk, jitter=1e-10):
    try:
        return np.linalg.cholesky(Vk)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(Vk + jitter * np.eye(Vk.shape[-1]))
    except np.linalg.LinAlgError:
        raise NumericalError("conditional posterior covariance is not positive definite") from None


def _prior_precisions(prior, n, rng):
    if isinstance(prior, IwPrior):
        n = 10_000 if n is None else n
        return vb1_precisions(prior, draw_u(prior.nu_a, n, rng))
    if isinstance(prior, FcSampleSet):
        n = prior.K if n is None else n
        if n > prior.K:
            raise DataError(f"requested {n} samples but only {prior.K} prior draws exist")
        return prior.Ginv[:n]
    raise DataError(f"unsupported prior type {type(prior).__name__}")


def sample_posterior_a(fit, Y, prior, mode="draw", n=None, seed=0, output="fc"):
    """Samples from ``q(A | Y)`` or the induced FC matrices.

    One sample is produced per prior draw: a fresh ``u`` for the
    inverse-Wishart prior or one stored ``G_k`` for the permuted-Cholesky
    prior.

    Parameters
    ----------
    fit : VbFit
    Y : (T, V) array
        The data the fit was computed from.
    prior : IwPrior or FcSampleSet
    mode : {"draw", "mean"}
        ``"draw"`` samples every ``a_t`` from its conditional Normal;
        ``"mean"`` uses the conditional mean only.
    n : int, optional
        Number of samples; defaults to 10,000 ``u`` draws or all ``G_k``.
    output : {"fc", "A"}
        Return ``(n, Q, Q)`` correlation matrices or ``(n, T, Q)`` draws.
    """
    if mode not in ("draw", "mean"):
        raise DataError(f"mode must be 'draw' or 'mean', got {mode!r}")
    if output not in ("fc", "A"):
        raise DataError(f"output must be 'fc' or 'A', got {output!r}")
    rng = as_rng(seed)
    Y = np.asarray(Y, dtype=float)
    P = _prior_precisions(prior, n, rng)
    T = Y.shape[0]
    out = []
    for start in range(0, len(P), CHUNK):
        Vk, B = _conditional_moments(fit, Y, P[start : start + CHUNK])
        A = np.einsum("tq,kqr->ktr", B, Vk)
        if mode == "draw":
            L = _batch_cholesky(Vk)
            Z = rng.standard_normal((len(Vk), T, Vk.shape[-1]))
            A += np.einsum("ktq,krq->ktr", Z, L)
        out.append(A if output == "A" else batch_correlation(A))
    return np.concatenate(out, axis=0)


def fc_credible_intervals(fc_samples, level=0.95, point=None, keep_samples=False):
    """Element-wise equal-tailed credible intervals for FC.

    Quantiles use linear interpolation between order statistics
    (``numpy.quantile`` default).  ``point`` is the reported FC estimate,
    usually ``Cor(A_hat)``; it defaults to the sample mean.
    """
    X = np.asarray(fc_samples, dtype=float)
    if not 0 < level < 1:
        raise DataError("level must be in (0, 1)")
    n = X.shape[0]
    tail = (1 - level) / 2
    if n < 100:
        warnings.warn(f"only {n} FC samples; intervals are unreliable", RuntimeWarning, stacklevel=2)
    elif n * tail < 1:
        warnings.warn(
            f"{n} samples cannot resolve the {tail:.4g} quantile", RuntimeWarning, stacklevel=2
        )
    lo, med, hi = np.quantile(X, [tail, 0.5, 1 - tail], axis=0)
    Q = X.shape[1]
    idx = np.arange(Q)
    lo[idx, idx] = hi[idx, idx] = med[idx, idx] = 1.0
    sig = (lo > 0) | (hi < 0)
    sig[idx, idx] = False
    mean = X.mean(axis=0) if point is None else np.asarray(point, dtype=float)
    return FcPosterior(
        mean=mean, median=med, ci_lo=lo, ci_hi=hi, significant=sig, level=level,
        samples=X if keep_samples else None,
    )


def posterior_fc(fit, Y, prior, level=0.95, mode="draw", n=None, seed=0):
    """FC credible intervals around ``Cor(A_hat)`` for a VB fit."""
    samples = sample_posterior_a(fit, Y, prior, mode=mode, n=n, seed=seed)
    return fc_credible_intervals(samples, level, point=correlation(fit.state.A_hat))
