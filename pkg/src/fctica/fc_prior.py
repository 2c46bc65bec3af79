"""Population-informed priors on the FC correlation matrix ``G``.

Two priors are provided:

* an inverse-Wishart ``IW(Psi0, nu0)`` centered at the training mean, with
  ``nu0`` chosen as large as possible while keeping every off-diagonal
  prior variance at or above the empirical variance;
* a permuted-Cholesky prior that samples correlation matrices from a
  Gaussian model of transformed Cholesky factors, averaged over random
  row/column orderings to remove the ordering bias of the factorization.
"""
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from ._utils import as_rng, cholesky_jitter
from .exceptions import DataError, InsufficientDataError, NumericalError

logger = logging.getLogger(__name__)

EPS_CLAMP = 1e-6
NU_DELTA = 1e-3
NU_SPAN = 200.0
NU_TOL = 1e-6


# ---------------------------------------------------------------------------
# inverse-Wishart prior


@dataclass
class IwPrior:
    Psi0: np.ndarray
    nu0: float
    maximally_diffuse: bool = False

    @property
    def Q(self):
        return self.Psi0.shape[0]

    @property
    def mean(self):
        return self.Psi0 / (self.nu0 - self.Q - 1)

    @property
    def nu_a(self):
        return iw_marginal_dof(self.nu0, self.Q)

    @property
    def element_var(self):
        return iw_element_variance(self.Psi0, self.nu0)

    def sample(self, n, seed=None):
        """Draw ``n`` covariance matrices from the prior."""
        rng = as_rng(seed)
        draws = stats.invwishart.rvs(df=self.nu0, scale=self.Psi0, size=n, random_state=rng)
        return np.asarray(draws).reshape(n, self.Q, self.Q)


def iw_element_variance(Psi, nu):
    """Element-wise variance of ``W ~ IW(Psi, nu)``.

    ``Var(W_ij) = ((nu-Q+1) psi_ij^2 + (nu-Q-1) psi_ii psi_jj)
    / ((nu-Q) (nu-Q-1)^2 (nu-Q-3))``, finite for ``nu > Q + 3``.
    """
    Psi = np.asarray(Psi, dtype=float)
    Q = Psi.shape[0]
    if nu <= Q + 3:
        raise DataError(f"IW variance is infinite for nu={nu} <= Q+3={Q + 3}")
    d = np.diag(Psi)
    num = (nu - Q + 1) * Psi**2 + (nu - Q - 1) * np.outer(d, d)
    return num / ((nu - Q) * (nu - Q - 1) ** 2 * (nu - Q - 3))


def _iw_var_centered(xbar, nu):
    Q = xbar.shape[0]
    return iw_element_variance((nu - Q - 1) * xbar, nu)


def fit_iw_prior(train, nu_max=None, delta=NU_DELTA, tol=NU_TOL):
    """Constrained method-of-moments fit of ``IW(Psi0, nu0)``.

    ``Psi0 = (nu0 - Q - 1) * xbar`` so the prior mean equals the training
    mean, and ``nu0`` is the largest value in ``(Q + 3 + delta, nu_max]``
    for which every off-diagonal prior variance is at least the
    training variance.  Prior variance decreases in ``nu0``, so the
    admissible set is an interval and is located by bisection.
    """
    Q = train.Q
    if train.N < Q + 2:
        raise InsufficientDataError(f"need at least Q+2={Q + 2} training matrices, got {train.N}")
    xbar = train.mean
    s2 = train.var
    if not np.all(np.isfinite(s2)):
        raise DataError("training variance is not finite")
    off = ~np.eye(Q, dtype=bool)
    if nu_max is None:
        nu_max = Q + NU_SPAN

    def admissible(nu):
        return bool(np.all(_iw_var_centered(xbar, nu)[off] >= s2[off]))

    lo = Q + 3 + delta
    hi = float(nu_max)
    if not admissible(lo):
        logger.warning("no admissible nu0; returning maximally diffuse IW prior")
        return IwPrior(Psi0=(lo - Q - 1) * xbar, nu0=lo, maximally_diffuse=True)
    if admissible(hi):
        nu0 = hi
    else:
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if admissible(mid):
                lo = mid
            else:
                hi = mid
        nu0 = lo
    return IwPrior(Psi0=(nu0 - Q - 1) * xbar, nu0=nu0)


def iw_marginal_dof(nu0, Q):
    """Degrees of freedom of the multivariate-t marginal prior on ``a_t``."""
    nu_a = nu0 + 1 - Q
    if nu_a <= 2:
        warnings.warn(
            f"nu_a = {nu_a} <= 2: prior variance of a_t is undefined",
            RuntimeWarning,
            stacklevel=2,
        )
    return nu_a


# ---------------------------------------------------------------------------
# Cholesky transform


def n_chol_params(Q):
    return Q * (Q + 1) // 2


def chol_transform(L, eps_clamp=EPS_CLAMP):
    """Map the lower triangle of a correlation Cholesky factor to R^p.

    Diagonal entries go through ``logit`` and off-diagonal entries through
    the Fisher ``atanh``, after clamping away from their bounds.  Entries
    are ordered row by row (``numpy.tril_indices`` order).
    """
    L = np.asarray(L, dtype=float)
    if L.ndim < 2 or L.shape[-1] != L.shape[-2]:
        raise DataError(f"expected square factor(s), got shape {L.shape}")
    Q = L.shape[-1]
    if np.any(np.triu(L, k=1) != 0):
        raise DataError("Cholesky factor must be lower triangular")
    rows, cols = np.tril_indices(Q)
    vals = L[..., rows, cols]
    diag = rows == cols
    out = np.empty_like(vals)
    out[..., diag] = special.logit(np.clip(vals[..., diag], eps_clamp, 1 - eps_clamp))
    out[..., ~diag] = np.arctanh(np.clip(vals[..., ~diag], -1 + eps_clamp, 1 - eps_clamp))
    return out


def chol_untransform(m, Q):
    """Inverse of :func:`chol_transform` followed by unit-row rescaling.

    Accepts a single length-``p`` vector or a ``(K, p)`` stack and returns
    lower-triangular factors with positive diagonal and unit row norms.
    """
    m = np.asarray(m, dtype=float)
    rows, cols = np.tril_indices(Q)
    if m.shape[-1] != rows.size:
        raise DataError(f"expected {rows.size} values for Q={Q}, got {m.shape[-1]}")
    diag = rows == cols
    vals = np.empty_like(m)
    vals[..., diag] = special.expit(m[..., diag])
    vals[..., ~diag] = np.tanh(m[..., ~diag])
    L = np.zeros(m.shape[:-1] + (Q, Q))
    L[..., rows, cols] = vals
    L /= np.linalg.norm(L, axis=-1, keepdims=True)
    return L


# ---------------------------------------------------------------------------
# permuted-Cholesky model


@dataclass
class PcholComponent:
    """Gaussian PCA model of transformed Cholesky factors for one ordering."""

    perm: np.ndarray
    mean: np.ndarray
    D: np.ndarray
    V: np.ndarray
    score_var: float


@dataclass
class PcholModel:
    components: list
    Q: int
    eps_clamp: float = EPS_CLAMP

    @property
    def n_perm(self):
        return len(self.components)

    @property
    def p(self):
        return n_chol_params(self.Q)


@dataclass
class FcSampleSet:
    """Prior draws of ``G`` with precomputed inverses."""

    samples: np.ndarray
    Ginv: np.ndarray = field(default=None)
    lambda_max_inv: np.ndarray = field(default=None)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim == 2:
            self.samples = self.samples[None]
        if self.Ginv is None:
            self.Ginv = np.linalg.inv(self.samples)
            self.Ginv = 0.5 * (self.Ginv + np.swapaxes(self.Ginv, 1, 2))
        if self.lambda_max_inv is None:
            self.lambda_max_inv = 1.0 / np.linalg.eigvalsh(self.samples)[:, 0]

    @property
    def K(self):
        return self.samples.shape[0]

    @property
    def Q(self):
        return self.samples.shape[1]


def _permuted_factors(X, perm):
    Xp = X[:, perm][:, :, perm]
    L = np.empty_like(Xp)
    for i, Xi in enumerate(Xp):
        L[i] = cholesky_jitter(Xi, what=f"permuted training matrix {i}")
    return L


def _fit_component(X, perm, eps_clamp):
    N, Q, _ = X.shape
    p = n_chol_params(Q)
    M = chol_transform(_permuted_factors(X, perm), eps_clamp)
    mean = M.mean(axis=0)
    U, D, Vt = np.linalg.svd(M - mean, full_matrices=True)
    k = D.size
    D = np.concatenate([D, np.zeros(p - k)])
    U = U[:, :k]
    live = D[:k] > 1e-12 * max(D[0], 1e-300) if k else np.zeros(0, bool)
    if N > 1 and live.any():
        score_var = float(U[:, live].var(axis=0, ddof=1).mean())
    else:
        score_var = 1.0 / max(N - 1, 1)
    return PcholComponent(perm=np.asarray(perm), mean=mean, D=D, V=Vt.T, score_var=score_var)


def build_pchol_model(train, n_perm=100, seed=None, permutations=None, eps_clamp=EPS_CLAMP):
    """Fit one Gaussian PCA model of Cholesky factors per random ordering.

    Parameters
    ----------
    train : FcTrainingSet
    n_perm : int
        Number of uniformly random permutations.  Ignored when
        ``permutations`` is given.
    seed : int or Generator, optional
    permutations : sequence of index arrays, optional
        Explicit orderings, e.g. ``[np.arange(Q)]`` for the unpermuted model.
    """
    X = np.asarray(train.samples, dtype=float)
    N, Q, _ = X.shape
    p = n_chol_params(Q)
    if N <= p:
        warnings.warn(
            f"N={N} training matrices <= p={p} Cholesky parameters; PCA is rank deficient",
            RuntimeWarning,
            stacklevel=2,
        )
    if permutations is None:
        if n_perm < 1:
            raise DataError("n_perm must be at least 1")
        rng = as_rng(seed)
        permutations = [rng.permutation(Q) for _ in range(n_perm)]
    comps = [_fit_component(X, np.asarray(perm), eps_clamp) for perm in permutations]
    return PcholModel(components=comps, Q=Q, eps_clamp=eps_clamp)


def _draw_component(comp, Q, n, rng):
    p = comp.D.size
    z = rng.standard_normal((n, p)) * np.sqrt(comp.score_var)
    m = (z * comp.D) @ comp.V.T + comp.mean
    L = chol_untransform(m, Q)
    Xp = L @ np.swapaxes(L, 1, 2)
    inv = np.argsort(comp.perm)
    X = Xp[:, inv][:, :, inv]
    X = 0.5 * (X + np.swapaxes(X, 1, 2))
    idx = np.arange(Q)
    X[:, idx, idx] = 1.0
    return X


def _valid_draws(X):
    return np.linalg.eigvalsh(X)[:, 0] > 0


def sample_pchol(model, K, seed=None, max_retries=10):
    """Draw ``K`` correlation matrices from a permuted-Cholesky model.

    Draws are split as evenly as possible across permutations (any
    remainder goes round-robin to the first ones).  Each permutation uses
    its own child seed, so output depends only on ``(model, K, seed)``.
    """
    Q = model.Q
    n_perm = model.n_perm
    counts = np.full(n_perm, K // n_perm)
    counts[: K % n_perm] += 1
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(n_perm)
    out = []
    for comp, n, child in zip(model.components, counts, children):
        if n == 0:
            continue
        rng = np.random.default_rng(child)
        X = _draw_component(comp, Q, n, rng)
        for _ in range(max_retries):
            bad = ~_valid_draws(X)
            if not bad.any():
                break
            X[bad] = _draw_component(comp, Q, int(bad.sum()), rng)
        else:
            if (~_valid_draws(X)).any():
                raise NumericalError("pChol draw failed correlation validation after retries")
        out.append(X)
    samples = np.concatenate(out, axis=0) if out else np.zeros((0, Q, Q))
    return FcSampleSet(samples=samples)
