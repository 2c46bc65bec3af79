import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fctica.evaluate import (
    ci_coverage,
    element_labels,
    icc,
    mae,
    mean_offdiag,
    mse,
    percent_change,
    write_metric_csv,
)
from fctica.exceptions import DataError
from fctica.posterior import FcPosterior


def _post(lo, hi):
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    mid = 0.5 * (lo + hi)
    return FcPosterior(mid, mid, lo, hi, (lo > 0) | (hi < 0), 0.95)


def test_mae_zero_when_exact():
    x = np.random.default_rng(0).standard_normal((5, 3, 3))
    assert np.all(mae(x, x) == 0)


def test_mae_is_median_of_absolute_errors():
    truth = np.zeros((3, 1, 1))
    est = np.array([-1.0, 0.0, 3.0]).reshape(3, 1, 1)
    assert mae(est, truth)[0, 0] == 1.0


def test_mae_needs_three_subjects_and_matched_shapes():
    with pytest.raises(DataError):
        mae(np.zeros((2, 2, 2)), np.zeros((2, 2, 2)))
    with pytest.raises(DataError):
        mae(np.zeros((3, 2, 2)), np.zeros((3, 2, 3)))


@given(st.permutations(range(6)))
def test_mae_permutation_invariant(perm):
    rng = np.random.default_rng(3)
    est, truth = rng.standard_normal((2, 6, 2, 2))
    perm = list(perm)
    assert np.array_equal(mae(est, truth), mae(est[perm], truth[perm]))


def test_mse_and_percent_change():
    est = np.array([1.0, 2.0, 3.0]).reshape(3, 1)
    assert mse(est, np.zeros((3, 1)))[0] == pytest.approx(14 / 3)
    assert percent_change(np.array([0.9]), np.array([1.0]))[0] == pytest.approx(-10.0)


def test_icc_perfect_agreement():
    x = np.arange(10.0).reshape(10, 1)
    assert icc(x, x)[0] == pytest.approx(1.0)


def test_icc_null_noise_is_near_zero():
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal((2, 200, 1))
    assert abs(icc(a, b)[0]) < 0.15
    # averaged over replicates the estimator is centered at 0
    a, b = rng.standard_normal((2, 200, 400))
    assert abs(np.mean(icc(a, b))) < 0.02


def test_icc_variance_components():
    rng = np.random.default_rng(5)
    subj = rng.standard_normal((200, 1))
    a = subj + rng.standard_normal((200, 1))
    b = subj + rng.standard_normal((200, 1))
    assert abs(icc(a, b)[0] - 0.5) < 0.1
    subj = rng.standard_normal((200, 400))
    a = subj + rng.standard_normal((200, 400))
    b = subj + rng.standard_normal((200, 400))
    assert abs(np.mean(icc(a, b)) - 0.5) < 0.02


def test_icc_zero_variance_is_missing():
    x = np.ones((5, 2))
    assert np.all(np.isnan(icc(x, x)))


@given(st.floats(-100, 100), st.floats(0.01, 100))
def test_icc_affine_invariant(shift, scale):
    rng = np.random.default_rng(6)
    a, b = rng.standard_normal((2, 20, 3))
    assert np.allclose(icc(a, b), icc(scale * a + shift, scale * b + shift), atol=1e-9)


def test_icc_stays_in_range():
    rng = np.random.default_rng(7)
    a, b = rng.standard_normal((2, 3, 50))
    v = icc(a, b)
    assert np.all((v >= -1) & (v <= 1))


def test_coverage_full_and_empty():
    truths = np.random.default_rng(8).uniform(-0.9, 0.9, (4, 3, 3))
    full = [_post(-np.ones((3, 3)), np.ones((3, 3))) for _ in truths]
    per, overall, width = ci_coverage(full, truths)
    assert overall == 1.0 and np.all(per == 1) and width == 2.0
    wrong = [_post(t + 0.5, t + 0.5) for t in truths]
    _, overall, width = ci_coverage(wrong, truths)
    assert overall == 0.0 and width == 0.0


def test_coverage_monotone_in_level():
    from fctica.posterior import fc_credible_intervals

    rng = np.random.default_rng(9)
    posts = {lvl: [] for lvl in (0.5, 0.8, 0.95)}
    truths = []
    for _ in range(5):
        s = rng.normal(0.2, 0.1, (500, 3, 3))
        s = 0.5 * (s + np.swapaxes(s, 1, 2))
        s[:, range(3), range(3)] = 1
        for lvl in posts:
            posts[lvl].append(fc_credible_intervals(s, lvl))
        t = rng.normal(0.2, 0.1, (3, 3))
        truths.append(0.5 * (t + t.T))
    cov = [ci_coverage(posts[lvl], truths)[1] for lvl in sorted(posts)]
    assert cov == sorted(cov)


def test_mean_offdiag_and_labels():
    M = np.array([[1, 2, 3], [2, 1, 4], [3, 4, 1]], float)
    assert mean_offdiag(M) == 3.0
    names, _ = element_labels((3, 3), "fc")
    assert names == ["0_1", "0_2", "1_2"]
    names, _ = element_labels((2, 2), "map")
    assert names == ["0_0", "0_1", "1_0", "1_1"]


def test_metric_csv_has_element_header(tmp_path):
    p = tmp_path / "m.csv"
    M = np.array([[0, 0.1, 0.2], [0.1, 0, 0.3], [0.2, 0.3, 0]])
    write_metric_csv(p, {"dr": M, "vb2": M / 2})
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["label", "0_1", "0_2", "1_2"]
    assert rows[1][0] == "dr" and float(rows[1][3]) == 0.3
    assert float(rows[2][1]) == 0.05
