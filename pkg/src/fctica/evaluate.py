"""Accuracy and reliability metrics over a set of subjects.

All functions take stacks with subjects on the first axis and reduce
element-wise, returning one matrix shaped like a single subject's estimate.
"""
import csv
import warnings

import numpy as np

from .exceptions import DataError


def _stack(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim < 2:
        raise DataError(f"{name}: expected a stack with subjects on axis 0")
    return x


def _matched(est, truth, min_n=1):
    est = _stack(est, "estimates")
    truth = _stack(truth, "truths")
    if est.shape != truth.shape:
        raise DataError(f"shape mismatch: {est.shape} vs {truth.shape}")
    if est.shape[0] < min_n:
        raise DataError(f"need at least {min_n} subjects, got {est.shape[0]}")
    return est, truth


def mae(estimates, truths):
    """Median over subjects of the absolute error, per element."""
    est, truth = _matched(estimates, truths, min_n=3)
    return np.median(np.abs(est - truth), axis=0)


def mse(estimates, truths):
    est, truth = _matched(estimates, truths)
    return np.mean((est - truth) ** 2, axis=0)


def percent_change(metric, baseline):
    """``100 (metric - baseline) / baseline``; negative means improvement."""
    metric = np.asarray(metric, dtype=float)
    baseline = np.asarray(baseline, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return 100.0 * (metric - baseline) / baseline


def icc(session1, session2):
    """One-way random-effects ICC(1,1) for two sessions per subject.

    ``(MSB - MSW) / (MSB + MSW)``; elements with zero total variance are
    returned as NaN.  Negative values are kept.
    """
    x1, x2 = _matched(session1, session2, min_n=3)
    n = x1.shape[0]
    subj_mean = 0.5 * (x1 + x2)
    grand = subj_mean.mean(axis=0)
    msb = 2.0 * np.sum((subj_mean - grand) ** 2, axis=0) / (n - 1)
    msw = (np.sum((x1 - subj_mean) ** 2, axis=0) + np.sum((x2 - subj_mean) ** 2, axis=0)) / n
    denom = msb + msw
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(denom > 0, (msb - msw) / denom, np.nan)
    return out


def ci_coverage(posteriors, truths):
    """Fraction of subjects whose interval covers the truth.

    Returns ``(per_element, overall, mean_width)``; ``overall`` and
    ``mean_width`` pool the strict upper triangle over all subjects.
    """
    truths = _stack(truths, "truths")
    if len(posteriors) != len(truths):
        raise DataError("posteriors and truths must cover the same subjects")
    lo = np.stack([p.ci_lo for p in posteriors])
    hi = np.stack([p.ci_hi for p in posteriors])
    covered = (truths >= lo) & (truths <= hi)
    per_element = covered.mean(axis=0)
    iu = np.triu_indices(truths.shape[1], k=1)
    overall = float(covered[:, iu[0], iu[1]].mean())
    width = float((hi - lo)[:, iu[0], iu[1]].mean())
    return per_element, overall, width


def mean_offdiag(M):
    """Mean of the strict upper triangle of a symmetric matrix."""
    M = np.asarray(M)
    iu = np.triu_indices(M.shape[0], k=1)
    return float(np.mean(M[iu]))


def element_labels(shape, kind="fc"):
    """Column names ``"q_r"`` for FC pairs or ``"q_v"`` for map entries."""
    if kind == "fc":
        iu = np.triu_indices(shape[0], k=1)
        return [f"{i}_{j}" for i, j in zip(*iu)], iu
    rows, cols = np.indices(shape)
    return [f"{i}_{j}" for i, j in zip(rows.ravel(), cols.ravel())], (rows.ravel(), cols.ravel())


def write_metric_csv(path, tables, kind="fc"):
    """Write ``{label: matrix}`` as CSV: one row per label, one column per element."""
    tables = dict(tables)
    if not tables:
        warnings.warn("no metric tables to write", RuntimeWarning, stacklevel=2)
        return
    first = next(iter(tables.values()))
    names, idx = element_labels(np.shape(first), kind)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + names)
        for label, M in tables.items():
            vals = np.asarray(M)[idx]
            w.writerow([label] + [repr(float(v)) for v in vals])
