"""Variational-Bayes fixed-point iterations for FC template ICA.

Two algorithms share the ``q(S)`` and ``q(tau^2)`` updates and differ in
``q(A)``:

VB1
    Inverse-Wishart prior on ``G``.  The marginal prior on ``a_t`` is a
    multivariate t, written as a Gamma scale mixture of Normals and
    integrated by Monte Carlo over the mixing variable ``u``.
VB2
    Permuted-Cholesky prior on ``G``, integrated over a fixed set of prior
    draws ``G_k``; per-sample posterior covariances can be approximated by a
    three-term Neumann series while the eigenvalue condition holds.

Both reduce to the same computation: a stack of prior precisions ``P_k``
(``u_k nu_a Psi0^{-1}`` or ``G_k^{-1}``), per-sample covariances
``V_k = (E + P_k)^{-1}`` with ``E = E[S S^T] / tau2``, and the laws of total
expectation and covariance over ``k``.
"""
import json
import logging
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .exceptions import ConvergenceError, DataError, NumericalError
from .fc_prior import FcSampleSet, IwPrior
from .regression import relative_change, source_posterior, tica_em

logger = logging.getLogger(__name__)

AR_ORDER = 10


@dataclass
class VbOptions:
    method: str = "VB2"
    tol: float = 1e-3
    max_iter: int = 100
    n_u_samples: int = 10_000
    use_neumann: bool = True
    seed: int = 0
    alpha0: float = 1e-3
    beta0: float = 1e-3
    # q(S) last would report sources inflated by T / T_eff whenever the ESS
    # discount is active; ending on q(A) and the rescale keeps A S on scale
    order: tuple = ("S", "A", "tau")
    use_ess: bool = True

    def __post_init__(self):
        self.method = self.method.upper()
        self.order = tuple(self.order)
        if self.method not in ("VB1", "VB2"):
            raise DataError(f"unknown VB method {self.method!r}")
        if self.tol <= 0:
            raise DataError("tol must be positive")
        if self.n_u_samples < 100:
            raise DataError("n_u_samples must be at least 100")
        if sorted(self.order) != ["A", "S", "tau"]:
            raise DataError(f"order must be a permutation of A, S, tau; got {self.order}")


@dataclass
class VbState:
    """Current approximate-posterior moments.

    ``A_cov`` is the sample-averaged conditional covariance
    ``mean_k V_k``; the full ``V(a_t)`` adds a per-time term available from
    :meth:`a_cov`.
    """

    S_hat: np.ndarray
    S_cov: np.ndarray
    ESS_S: np.ndarray
    A_hat: np.ndarray
    A_cov: np.ndarray
    EAA: np.ndarray
    alpha: float
    beta_hat: float
    tau2_hat: float
    T_eff: float
    admissible_fraction: float = 1.0
    # per-sample covariances and regression targets for V(a_t)
    Vk: np.ndarray = field(default=None, repr=False)
    B: np.ndarray = field(default=None, repr=False)

    def a_cov(self, t):
        """Full posterior covariance ``V(a_t)`` at time ``t``."""
        if self.Vk is None:
            return self.A_cov.copy()
        m = self.Vk @ self.B[t]
        return self.A_cov + m.T @ m / len(m) - np.outer(m.mean(0), m.mean(0))


@dataclass
class VbFit:
    state: VbState
    log: list
    converged: bool
    n_iter: int
    method: str
    u: np.ndarray = None

    def log_lines(self):
        """Iteration log as line-delimited JSON records."""
        return "".join(json.dumps(rec) + "\n" for rec in self.log)


# ---------------------------------------------------------------------------
# effective sample size


def yule_walker(x, order=AR_ORDER):
    """AR coefficients and autocorrelations ``rho[0..order]`` of a series.

    Uses the biased sample autocovariance.  If the Toeplitz system is
    singular the order is reduced until it solves.
    """
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    n = x.size
    full = np.correlate(x, x, mode="full")[n - 1 :] / n
    if full[0] <= 0:
        return np.zeros(0), np.ones(1)
    r = full / full[0]
    for p in range(min(order, n - 1), 0, -1):
        try:
            phi = linalg.solve_toeplitz(r[:p], r[1 : p + 1])
        except (linalg.LinAlgError, ValueError):
            continue
        if np.all(np.isfinite(phi)):
            return phi, r[: p + 1]
    return np.zeros(0), np.ones(1)


def ar_autocorrelation(phi, n_lags, rho_init=None):
    """Autocorrelation ``rho[0..n_lags-1]`` of a stationary AR process.

    ``rho_init`` gives lags ``0..p``; if omitted they are solved from the
    coefficients.
    """
    phi = np.asarray(phi, dtype=float)
    p = phi.size
    rho = np.zeros(n_lags)
    rho[0] = 1.0
    if p == 0 or n_lags == 1:
        return rho
    if rho_init is None:
        # rho_k - sum_j phi_j rho_{|k-j|} = 0 for k = 1..p, rho_0 = 1
        M = np.eye(p)
        rhs = phi.copy()
        for k in range(1, p + 1):
            for j in range(1, p + 1):
                lag = abs(k - j)
                if lag > 0:
                    M[k - 1, lag - 1] -= phi[j - 1]
        rho_init = np.concatenate([[1.0], np.linalg.solve(M, rhs)])
    m = min(p + 1, n_lags)
    rho[:m] = rho_init[:m]
    for k in range(p + 1, n_lags):
        rho[k] = phi @ rho[k - 1 : k - p - 1 : -1]
        if abs(rho[k]) < 1e-15 and abs(rho[k - 1]) < 1e-15:
            break
    return rho


def ess_from_autocorrelation(rho, T):
    """``Tr(Sigma)^2 / Tr(Sigma^2)`` for the Toeplitz matrix of ``rho``.

    Uses ``Tr(Sigma^2) = T + 2 sum_k (T - k) rho_k^2`` so the ``T x T``
    matrix is never formed.
    """
    rho = np.asarray(rho, dtype=float)[:T]
    k = np.arange(1, rho.size)
    return T**2 / (T + 2.0 * np.sum((T - k) * rho[1:] ** 2))


def effective_sample_size(A_init, order=AR_ORDER):
    """Mean over columns of the AR-implied effective sample size, capped at T."""
    A_init = np.asarray(A_init, dtype=float)
    T = A_init.shape[0]
    vals = []
    for col in A_init.T:
        phi, rho0 = yule_walker(col, order)
        rho = ar_autocorrelation(phi, T, rho_init=rho0)
        vals.append(ess_from_autocorrelation(rho, T))
    return float(min(np.mean(vals), T))


# ---------------------------------------------------------------------------
# q(A)


def neumann_inverse(L_E, Ginv):
    """Three-term Neumann approximation of ``(L_E L_E^T + Ginv)^{-1}``.

    ``Ginv`` may be a single matrix or a ``(K, Q, Q)`` stack.  Valid when
    the spectral radius of ``W = L_E^{-1} Ginv L_E^{-T}`` is below one.
    """
    Q = L_E.shape[0]
    Linv = linalg.solve_triangular(L_E, np.eye(Q), lower=True)
    W = Linv @ Ginv @ Linv.T
    core = np.eye(Q) - W + W @ W
    return Linv.T @ core @ Linv


def _mixture_covariances(E, P, use_neumann, lam_max_P=None):
    """Per-sample ``V_k = (E + P_k)^{-1}`` and the admissible mask."""
    K, Q, _ = P.shape
    keep = np.ones(K, dtype=bool)
    if use_neumann:
        L_E = np.linalg.cholesky(E)
        if lam_max_P is None:
            lam_max_P = np.linalg.eigvalsh(P)[:, -1]
        lam_max_Einv = 1.0 / np.linalg.eigvalsh(E)[0]
        keep = lam_max_Einv * lam_max_P < 1.0
        if not keep.any():
            warnings.warn(
                "no prior sample satisfies the Neumann condition; using exact solves",
                RuntimeWarning,
                stacklevel=3,
            )
            use_neumann = False
            keep[:] = True
        else:
            Vk = neumann_inverse(L_E, P[keep])
    if not use_neumann:
        Vk = np.linalg.inv(E + P)
    return 0.5 * (Vk + np.swapaxes(Vk, 1, 2)), keep


def _qa_from_precisions(state, Y, P, use_neumann=False, lam_max_P=None):
    T = Y.shape[0]
    tau2 = state.tau2_hat
    E = state.ESS_S / tau2
    E = 0.5 * (E + E.T)
    B = (Y @ state.S_hat.T) / tau2  # rows are b_t = S_hat y_t / tau2
    Vk, keep = _mixture_covariances(E, P, use_neumann, lam_max_P)
    Vbar = Vk.mean(axis=0)
    A_hat = B @ Vbar
    C = B.T @ B
    between = np.einsum("kij,jl,klm->im", Vk, C, Vk) / len(Vk) - Vbar @ C @ Vbar
    EAA = T * Vbar + A_hat.T @ A_hat + between
    new = replace(
        state,
        A_hat=A_hat,
        A_cov=Vbar,
        EAA=0.5 * (EAA + EAA.T),
        admissible_fraction=float(keep.mean()),
        Vk=Vk,
        B=B,
    )
    return rescale_state(new)


def rescale_state(state):
    """Scale ``A_hat`` columns to unit variance, compensating in the sources.

    Covariances are transformed congruently so every product ``A S`` and
    the expected likelihood are unchanged.
    """
    sd = state.A_hat.std(axis=0, ddof=1)
    if np.any(sd <= 0):
        raise NumericalError("posterior mean of A has a zero-variance column")
    inv = 1.0 / sd
    out = replace(
        state,
        A_hat=state.A_hat * inv,
        A_cov=state.A_cov * np.outer(inv, inv),
        EAA=state.EAA * np.outer(inv, inv),
        S_hat=state.S_hat * sd[:, None],
        S_cov=state.S_cov * np.outer(sd, sd),
        ESS_S=state.ESS_S * np.outer(sd, sd),
    )
    if state.Vk is not None:
        out.Vk = state.Vk * np.outer(inv, inv)
        out.B = state.B * sd
    return out


def draw_u(nu_a, n, rng):
    """``u ~ Gamma(shape=nu_a/2, rate=nu_a/2)``."""
    return rng.gamma(shape=nu_a / 2.0, scale=2.0 / nu_a, size=n)


def vb1_precisions(prior, u):
    nu_a = prior.nu_a
    Psi_inv = np.linalg.inv(prior.Psi0)
    Psi_inv = 0.5 * (Psi_inv + Psi_inv.T)
    return np.asarray(u)[:, None, None] * (nu_a * Psi_inv)


def update_qa_vb1(state, Y, prior, n_u=10_000, rng=None, u=None):
    """``q(A)`` under the inverse-Wishart prior via the t scale mixture.

    Pass ``u`` to reuse a fixed set of mixing draws; otherwise ``n_u``
    draws are taken from ``rng``.
    """
    if prior.nu_a <= 2:
        raise NumericalError(f"nu_a = {prior.nu_a} <= 2: prior variance of a_t undefined")
    if u is None:
        u = draw_u(prior.nu_a, n_u, np.random.default_rng(rng))
    return _qa_from_precisions(state, Y, vb1_precisions(prior, u))


def update_qa_vb2(state, Y, samples, use_neumann=True):
    """``q(A)`` averaged over a fixed set of prior correlation draws."""
    if samples.K == 0:
        raise DataError("empty prior sample set")
    return _qa_from_precisions(
        state, Y, samples.Ginv, use_neumann=use_neumann, lam_max_P=samples.lambda_max_inv
    )


# ---------------------------------------------------------------------------
# q(S) and q(tau^2)


def update_qs(state, Y, template):
    """Gaussian ``q(s_v)`` with the ESS-discounted ``E[A^T A]``."""
    if np.any(template.var <= 0):
        raise DataError("template variance must be positive")
    T = Y.shape[0]
    AtA = (state.T_eff / T) * state.EAA
    S_hat, S_cov = source_posterior(Y, state.A_hat, AtA, state.tau2_hat, template)
    ESS = S_cov.sum(axis=0) + S_hat @ S_hat.T
    return replace(state, S_hat=S_hat, S_cov=S_cov, ESS_S=0.5 * (ESS + ESS.T))


def expected_rss(Y, A_hat, S_hat, EAA, ESS_S):
    """``E[sum (y - a_t^T s_v)^2]`` under the factorized posterior."""
    return (
        np.sum(Y**2)
        - 2.0 * np.sum((A_hat.T @ Y) * S_hat)
        + np.trace(EAA @ ESS_S)
    )


def update_qtau(state, Y, alpha0=1e-3, beta0=1e-3):
    """Inverse-Gamma ``q(tau^2)``; returns the state with its posterior mean."""
    T, V = Y.shape
    alpha = alpha0 + 0.5 * T * V
    beta = beta0 + 0.5 * expected_rss(Y, state.A_hat, state.S_hat, state.EAA, state.ESS_S)
    if not beta > 0:
        raise NumericalError(f"beta_hat = {beta} <= 0: posterior moments are inconsistent")
    return replace(state, alpha=alpha, beta_hat=float(beta), tau2_hat=float(beta / (alpha - 1)))


# ---------------------------------------------------------------------------
# driver


def initial_state(init, T_eff, alpha0=1e-3, beta0=1e-3):
    """VB state from an EM template ICA fit."""
    A = init.A_hat
    T, Q = A.shape
    V = init.S_hat.shape[1]
    S_cov = init.S_cov if init.S_cov is not None else np.zeros((V, Q, Q))
    ESS = init.ESS_S if init.ESS_S is not None else init.S_hat @ init.S_hat.T
    alpha = alpha0 + 0.5 * T * V
    return VbState(
        S_hat=init.S_hat.copy(),
        S_cov=S_cov.copy(),
        ESS_S=ESS.copy(),
        A_hat=A.copy(),
        A_cov=np.zeros((Q, Q)),
        EAA=A.T @ A,
        alpha=alpha,
        beta_hat=init.tau2_hat * (alpha - 1),
        tau2_hat=init.tau2_hat,
        T_eff=T_eff,
    )


def run_vb(Y, template, prior, opts=None, init=None, T_eff=None, init_max_iter=100):
    """Iterate the VB updates to convergence.

    Parameters
    ----------
    Y : (T, V) array
        Centered data.
    template : SpatialTemplate
    prior : IwPrior (VB1) or FcSampleSet (VB2)
    opts : VbOptions
    init : TicaFit, optional
        Template ICA fit used for initialization; computed if omitted.
    T_eff : float, optional
        Effective sample size; estimated from ``init.A_hat`` if omitted.

    Returns
    -------
    VbFit
    """
    opts = opts or VbOptions(method="VB1" if isinstance(prior, IwPrior) else "VB2")
    Y = np.asarray(Y, dtype=float)
    T, V = Y.shape
    if template.mean.shape[1] != V:
        raise DataError("template and data disagree on V")
    if opts.method == "VB1" and not isinstance(prior, IwPrior):
        raise DataError("VB1 needs an IwPrior")
    if opts.method == "VB2" and not isinstance(prior, FcSampleSet):
        raise DataError("VB2 needs an FcSampleSet")
    if prior.Q != template.Q:
        raise DataError("prior and template disagree on Q")

    if init is None:
        init = tica_em(Y, template, max_iter=init_max_iter, tol=opts.tol)
    if T_eff is None:
        T_eff = effective_sample_size(init.A_hat) if opts.use_ess else float(T)
    state = initial_state(init, T_eff, opts.alpha0, opts.beta0)
    u = None
    if opts.method == "VB1":
        u = draw_u(prior.nu_a, opts.n_u_samples, np.random.default_rng(opts.seed))
    if opts.max_iter == 0:
        return VbFit(state, [], False, 0, opts.method, u)

    def step(s, exact=False):
        for part in opts.order:
            if part == "A":
                if opts.method == "VB1":
                    s = update_qa_vb1(s, Y, prior, u=u)
                else:
                    s = update_qa_vb2(s, Y, prior, use_neumann=opts.use_neumann and not exact)
            elif part == "S":
                s = update_qs(s, Y, template)
            else:
                s = update_qtau(s, Y, opts.alpha0, opts.beta0)
        return s

    log = []
    changes = []
    converged = False
    t0 = time.perf_counter()
    for it in range(1, opts.max_iter + 1):
        new = step(state)
        change = relative_change(
            (state.A_hat, state.S_hat, state.tau2_hat), (new.A_hat, new.S_hat, new.tau2_hat)
        )
        state = new
        changes.append(change)
        log.append(
            {
                "iteration": it,
                "change": change,
                "tau2": state.tau2_hat,
                "elapsed": round(time.perf_counter() - t0, 6),
                "admissible_fraction": state.admissible_fraction,
            }
        )
        logger.debug("%s iter %d change %.3g", opts.method, it, change)
        if not np.isfinite(change):
            raise ConvergenceError(f"{opts.method}: non-finite change at iteration {it}")
        if change < opts.tol:
            converged = True
            break
        if len(changes) > 5 and change > 10 * changes[-6]:
            raise ConvergenceError(
                f"{opts.method} diverging: change {change:.3g} at iteration {it}, "
                f"{changes[-6]:.3g} five iterations earlier\n"
                + "".join(json.dumps(r) + "\n" for r in log)
            )
    if opts.method == "VB2" and opts.use_neumann:
        # final pass with exact per-sample covariances over all samples
        new = step(state, exact=True)
        change = relative_change(
            (state.A_hat, state.S_hat, state.tau2_hat), (new.A_hat, new.S_hat, new.tau2_hat)
        )
        state = new
        log.append(
            {
                "iteration": it + 1,
                "change": change,
                "tau2": state.tau2_hat,
                "elapsed": round(time.perf_counter() - t0, 6),
                "admissible_fraction": state.admissible_fraction,
                "exact": True,
            }
        )
    if not converged:
        logger.warning("%s did not converge in %d iterations", opts.method, opts.max_iter)
    return VbFit(state, log, converged, len(log), opts.method, u)
