"""Population templates estimated from test-retest training data.

The spatial template is the across-subject mean and variance of
dual-regression maps; the FC training set collects one dual-regression
correlation matrix per session for the FC priors.
"""
import logging
from dataclasses import dataclass

import numpy as np

from ._utils import correlation, is_correlation
from .exceptions import DataError, InsufficientDataError
from .regression import center_rows, dual_regression

logger = logging.getLogger(__name__)

VAR_FLOOR_REL = 1e-6


@dataclass
class SpatialTemplate:
    """Prior mean and variance (both ``Q x V``) of the spatial sources."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.var = np.asarray(self.var, dtype=float)
        if self.mean.shape != self.var.shape:
            raise DataError("template mean and variance shapes differ")
        if np.any(self.var <= 0):
            raise DataError("template variance must be strictly positive")

    @property
    def Q(self):
        return self.mean.shape[0]

    @property
    def V(self):
        return self.mean.shape[1]


@dataclass
class FcTrainingSet:
    """Per-session correlation matrices with their element-wise moments."""

    samples: np.ndarray
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def from_samples(cls, samples):
        X = np.asarray(samples, dtype=float)
        if X.ndim != 3 or X.shape[1] != X.shape[2]:
            raise DataError("expected an (N, Q, Q) stack of correlation matrices")
        for i, Xi in enumerate(X):
            if not _valid_training_matrix(Xi):
                raise DataError(f"training matrix {i} is not a correlation matrix")
        mean = X.mean(axis=0)
        var = X.var(axis=0, ddof=1) if len(X) > 1 else np.zeros_like(mean)
        np.fill_diagonal(mean, 1.0)
        np.fill_diagonal(var, 0.0)
        return cls(samples=X, mean=mean, var=var)

    @property
    def N(self):
        return self.samples.shape[0]

    @property
    def Q(self):
        return self.samples.shape[1]


def _valid_training_matrix(X, tol=1e-10):
    if np.max(np.abs(X - X.T)) > tol or np.max(np.abs(np.diag(X) - 1)) > tol:
        return False
    return np.linalg.eigvalsh(X)[0] >= -tol


def pseudo_test_retest(Y):
    """Split one session into two centered halves along time."""
    Y = np.asarray(Y, dtype=float)
    half = Y.shape[0] // 2
    return center_rows(Y[:half]), center_rows(Y[half : 2 * half])


def summarize_sessions(pair, S0):
    """Dual-regression summary of one subject's two sessions.

    Returns ``(map_mean, [FC_1, FC_2])``: the session-averaged subject maps
    and the FC of each session.  Only these small arrays need to be kept
    per subject, so training data can be streamed.
    """
    pair = list(pair)
    if len(pair) != 2:
        raise DataError(f"each subject needs exactly 2 sessions, got {len(pair)}")
    fits = [dual_regression(Y, S0) for Y in pair]
    return 0.5 * (fits[0].S_hat + fits[1].S_hat), [correlation(f.A_hat) for f in fits]


def _session_fits(sessions, S0):
    for pair in sessions:
        yield summarize_sessions(pair, S0)


def _template_from_maps(maps):
    if len(maps) < 2:
        raise InsufficientDataError(f"need at least 2 subjects, got {len(maps)}")
    maps = np.asarray(maps)
    mean = maps.mean(axis=0)
    var = maps.var(axis=0, ddof=1)
    scale = float(var.mean())
    if scale <= 0:
        scale = float(np.mean(mean**2)) or 1.0
    floor = VAR_FLOOR_REL * scale
    return SpatialTemplate(mean=mean, var=np.maximum(var, floor))


def estimate_templates(sessions, S0):
    """Spatial template and FC training set from one pass of dual regressions.

    Parameters
    ----------
    sessions : iterable of (Y_test, Y_retest)
        One pair of centered ``T x V`` matrices per training subject.
    S0 : (Q, V) array
        Group maps.
    """
    return templates_from_summaries(_session_fits(sessions, S0))


def templates_from_summaries(summaries):
    """Spatial template and FC training set from :func:`summarize_sessions` outputs."""
    maps, fcs = [], []
    for m, fc in summaries:
        maps.append(m)
        fcs.extend(fc)
    return _template_from_maps(maps), FcTrainingSet.from_samples(fcs)


def estimate_spatial_template(sessions, S0):
    """Across-subject mean and floored variance of session-averaged DR maps.

    The variance is the sample variance of per-subject session means,
    which is non-negative and biased upward by residual within-subject
    noise.  Entries are floored at ``1e-6`` times the mean variance.
    """
    maps = [m for m, _ in _session_fits(sessions, S0)]
    return _template_from_maps(maps)


def estimate_fc_training(sessions, S0):
    """Dual-regression FC of every session, pooled into a training set."""
    fcs = []
    for _, fc in _session_fits(sessions, S0):
        fcs.extend(fc)
    train = FcTrainingSet.from_samples(fcs)
    if not all(is_correlation(X, tol=1e-8) for X in train.samples):
        logger.warning("some training FC matrices are singular")
    return train
