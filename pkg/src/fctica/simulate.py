"""Synthetic ground-truth studies on a 2D lattice.

Group maps are sums of Gaussian bumps.  Each subject gets smoothed spatial
deviations, a Wishart-perturbed FC matrix, time courses with that FC and
white measurement noise at a fixed SNR.  A subject's data matrix is
regenerated on demand from its stored noise seed, so a full study never
has to sit in memory.
"""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage, stats

from ._utils import as_rng, cholesky_jitter, correlation, cov_to_cor
from .exceptions import DataError
from .regression import center_rows

logger = logging.getLogger(__name__)

FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))

# three strongly coupled "visual" components, a weakly coupled "default
# mode" component and a moderately coupled "motor" component
BASE_FC = np.array(
    [
        [1.00, 0.70, 0.60, 0.10, 0.40],
        [0.70, 1.00, 0.65, 0.05, 0.35],
        [0.60, 0.65, 1.00, 0.00, 0.30],
        [0.10, 0.05, 0.00, 1.00, 0.10],
        [0.40, 0.35, 0.30, 0.10, 1.00],
    ]
)


@dataclass
class GeneratingTemplate:
    grid: tuple
    mean: np.ndarray
    sd: np.ndarray
    fwhm: float

    @property
    def Q(self):
        return self.mean.shape[0]

    @property
    def V(self):
        return self.mean.shape[1]


def gaussian_kernel(fwhm, truncate=4.0):
    """Normalized 1D Gaussian kernel for a FWHM in lattice units."""
    sigma = fwhm * FWHM_TO_SIGMA
    r = int(np.ceil(truncate * sigma))
    x = np.arange(-r, r + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def smooth_2d(img, fwhm):
    """Separable Gaussian smoothing of an ``(..., H, W)`` array, zero padded."""
    k = gaussian_kernel(fwhm)
    out = ndimage.convolve1d(img, k, axis=-1, mode="constant")
    return ndimage.convolve1d(out, k, axis=-2, mode="constant")


def _smoothed_variance(var_img, fwhm):
    """Per-vertex variance after smoothing independent noise of variance ``var_img``."""
    k2 = gaussian_kernel(fwhm) ** 2
    out = ndimage.convolve1d(var_img, k2, axis=-1, mode="constant")
    return ndimage.convolve1d(out, k2, axis=-2, mode="constant")


def generate_group_ics(
    grid=(55, 55), Q=5, n_bumps=2, seed=None, sd_scale=0.4, sd_floor=0.01, fwhm=8.0,
    centers=None, widths=None, width_range=(3.0, 6.0),
):
    """Group maps built from Gaussian bumps, peak-normalized to 1.

    Bumps are truncated at 3 SD so maps are exactly zero away from them.
    ``centers`` (``Q x n_bumps x 2``) and ``widths`` (``Q x n_bumps``)
    override the random placement.
    """
    if Q < 2:
        raise DataError("need at least two components")
    H, W = grid
    rng = as_rng(seed)
    yy, xx = np.mgrid[0:H, 0:W]
    margin = 0.15 * min(H, W)
    maps = np.zeros((Q, H, W))
    for q in range(Q):
        for b in range(n_bumps):
            if centers is not None:
                cy, cx = centers[q][b]
            else:
                cy = rng.uniform(margin, H - margin)
                cx = rng.uniform(margin, W - margin)
            s = widths[q][b] if widths is not None else rng.uniform(*width_range)
            d2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / s**2
            bump = np.exp(-0.5 * d2)
            bump[d2 > 9.0] = 0.0
            maps[q] += bump
        maps[q] /= maps[q].max()
    mean = maps.reshape(Q, H * W)
    sd = sd_scale * np.abs(mean) + sd_floor
    return GeneratingTemplate(grid=(H, W), mean=mean, sd=sd, fwhm=float(fwhm))


def generate_subject_ics(tmpl, seed=None):
    """Subject maps: generating mean plus a smoothed deviation.

    White noise scaled by the generating SD is smoothed, then rescaled so
    its per-vertex SD again equals the generating SD.
    """
    rng = as_rng(seed)
    H, W = tmpl.grid
    sd = tmpl.sd.reshape(tmpl.Q, H, W)
    noise = rng.standard_normal(sd.shape) * sd
    smoothed = smooth_2d(noise, tmpl.fwhm)
    post_sd = np.sqrt(_smoothed_variance(sd**2, tmpl.fwhm))
    with np.errstate(invalid="ignore", divide="ignore"):
        dev = np.where(post_sd > 0, smoothed / post_sd * sd, 0.0)
    return tmpl.mean + dev.reshape(tmpl.Q, H * W)


def generate_subject_fc(base, df=60.0, seed=None):
    """Correlation rescaling of a ``Wishart(base / df, df)`` draw."""
    base = np.asarray(base, dtype=float)
    Q = base.shape[0]
    if df <= Q:
        raise DataError(f"df={df} must exceed Q={Q}")
    W = stats.wishart.rvs(df=df, scale=base / df, random_state=as_rng(seed))
    return cov_to_cor(np.atleast_2d(W))


def generate_timecourses(fc, T, model="iid", phi=0.3, seed=None):
    """Zero-mean time courses with cross-sectional covariance ``fc``.

    ``model="ar1"`` gives a stationary AR(1) in time with coefficient
    ``phi``.  Columns are centered and scaled to unit sample variance.
    """
    if T < 2:
        raise DataError("need T >= 2")
    rng = as_rng(seed)
    fc = np.asarray(fc, dtype=float)
    L = cholesky_jitter(fc, what="FC matrix")
    eps = rng.standard_normal((T, fc.shape[0])) @ L.T
    if model == "iid":
        A = eps
    elif model == "ar1":
        if not -1 < phi < 1:
            raise DataError("AR(1) coefficient must be in (-1, 1)")
        A = np.empty_like(eps)
        A[0] = eps[0]
        c = np.sqrt(1.0 - phi**2)
        for t in range(1, T):
            A[t] = phi * A[t - 1] + c * eps[t]
    else:
        raise DataError(f"unknown time-course model {model!r}")
    A = A - A.mean(axis=0)
    return A / A.std(axis=0, ddof=1)


def signal_scale(A, S, intensity="top1"):
    """``sigma_a``: RMS time-course SD scaled by peak spatial intensity.

    ``intensity="top1"`` uses the mean squared intensity over each
    component's top 1% of vertices by magnitude; ``"peak"`` uses the
    squared maximum magnitude.
    """
    var_a = A.var(axis=0, ddof=1)
    absS = np.abs(S)
    if not np.any(absS > 0):
        raise DataError("all-zero sources: SNR is undefined")
    if intensity == "top1":
        n_top = max(1, int(np.ceil(0.01 * S.shape[1])))
        top = -np.sort(-absS, axis=1)[:, :n_top]
        peak2 = np.mean(top**2, axis=1)
    elif intensity == "peak":
        peak2 = absS.max(axis=1) ** 2
    else:
        raise DataError(f"unknown intensity rule {intensity!r}")
    return float(np.sqrt(np.mean(var_a * peak2)))


def assemble_data(A, S, snr, seed=None, intensity="top1"):
    """``Y = A S + sigma_e * noise`` with ``sigma_e = sigma_a / snr``, centered.

    Returns ``(Y, sigma_e)``.
    """
    if snr <= 0:
        raise DataError("snr must be positive")
    sigma_e = signal_scale(A, S, intensity) / snr
    return _noisy(A, S, sigma_e, seed), sigma_e


def _noisy(A, S, sigma_e, seed):
    rng = as_rng(seed)
    Y = A @ S
    if sigma_e > 0:
        Y += sigma_e * rng.standard_normal(Y.shape)
    return center_rows(Y)


# ---------------------------------------------------------------------------
# studies


@dataclass
class StudyConfig:
    grid: tuple = (55, 55)
    Q: int = 5
    n_bumps: int = 2
    n_train: int = 100
    n_test: int = 20
    T_total: int = 1200
    T_model: int = 600
    snr: float = 0.5
    fc_df: float = 60.0
    tc_model: str = "ar1"
    phi: float = 0.3
    fwhm: float = 8.0
    sd_scale: float = 0.4
    sd_floor: float = 0.01
    intensity: str = "top1"
    seed: int = 0
    base_fc: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.grid = tuple(int(g) for g in self.grid)
        if self.base_fc is None:
            if self.Q != BASE_FC.shape[0]:
                raise DataError("base_fc must be supplied when Q != 5")
            self.base_fc = BASE_FC.copy()
        if not 0 < self.T_model <= self.T_total:
            raise DataError("need 0 < T_model <= T_total")

    def as_dict(self):
        d = asdict(self)
        d.pop("base_fc")
        return d


@dataclass
class SyntheticSubject:
    """Ground truth for one subject; the data matrix is rebuilt on request."""

    S_true: np.ndarray
    FC_true: np.ndarray
    A_true: np.ndarray
    sigma_e: float
    noise_seed: int
    split: int

    def data(self, start=0, stop=None):
        """Centered data for time points ``[start, stop)`` of the session."""
        Y = self._full()
        return center_rows(Y[start:stop])

    def _full(self):
        rng = np.random.default_rng(self.noise_seed)
        Y = self.A_true @ self.S_true
        Y += self.sigma_e * rng.standard_normal(Y.shape)
        return Y

    def model_data(self, T=None):
        """First ``T`` volumes of the estimation segment (all of it by default)."""
        T = self.split if T is None else T
        if T > self.split:
            raise DataError(f"T={T} exceeds the model segment length {self.split}")
        return self.data(0, T)

    def test_retest(self):
        """The two halves of the session as pseudo test-retest data."""
        Y = self._full()
        half = Y.shape[0] // 2
        return center_rows(Y[:half]), center_rows(Y[half : 2 * half])

    def fc_model(self, T=None):
        T = self.split if T is None else T
        return correlation(self.A_true[:T])

    @property
    def fc_holdout(self):
        return correlation(self.A_true[self.split :])


@dataclass
class SyntheticStudy:
    config: StudyConfig
    generating: GeneratingTemplate
    train: list
    test: list

    @property
    def group_maps(self):
        return self.generating.mean


def _subject(cfg, tmpl, ss):
    s_ics, s_fc, s_tc, s_noise = ss.spawn(4)
    S = generate_subject_ics(tmpl, np.random.default_rng(s_ics))
    fc = generate_subject_fc(cfg.base_fc, cfg.fc_df, np.random.default_rng(s_fc))
    A = generate_timecourses(fc, cfg.T_total, cfg.tc_model, cfg.phi, np.random.default_rng(s_tc))
    sigma_e = signal_scale(A, S, cfg.intensity) / cfg.snr
    noise_seed = int(s_noise.generate_state(1, dtype=np.uint64)[0])
    return SyntheticSubject(S, fc, A, sigma_e, noise_seed, cfg.T_model)


def build_study(config=None, **overrides):
    """Deterministic training and test subjects from one master seed."""
    cfg = config or StudyConfig(**overrides)
    root = np.random.SeedSequence(cfg.seed)
    s_tmpl, s_train, s_test = root.spawn(3)
    tmpl = generate_group_ics(
        cfg.grid, cfg.Q, cfg.n_bumps, np.random.default_rng(s_tmpl),
        cfg.sd_scale, cfg.sd_floor, cfg.fwhm,
    )
    train = [_subject(cfg, tmpl, ss) for ss in s_train.spawn(cfg.n_train)]
    test = [_subject(cfg, tmpl, ss) for ss in s_test.spawn(cfg.n_test)]
    logger.info("built study: %d train, %d test, V=%d", len(train), len(test), tmpl.V)
    return SyntheticStudy(cfg, tmpl, train, test)
