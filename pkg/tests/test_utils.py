import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fctica._utils import (
    batch_correlation,
    cholesky_jitter,
    correlation,
    cov_to_cor,
    is_correlation,
    upper_pairs,
)
from fctica.exceptions import DegenerateCorrelationError, NumericalError


def test_correlation_matches_numpy(rng):
    A = rng.standard_normal((50, 4))
    assert np.allclose(correlation(A), np.corrcoef(A, rowvar=False), atol=1e-14)


def test_correlation_names_constant_column(rng):
    A = rng.standard_normal((10, 3))
    A[:, 1] = 2.0
    with pytest.raises(DegenerateCorrelationError, match="column 1"):
        correlation(A)


@given(st.integers(0, 2**32 - 1))
def test_batch_correlation_equals_loop(seed):
    X = np.random.default_rng(seed).standard_normal((6, 20, 3))
    expected = np.stack([correlation(x) for x in X])
    assert np.allclose(batch_correlation(X), expected, atol=1e-13)


def test_cov_to_cor_is_scale_invariant(rng):
    A = rng.standard_normal((30, 4))
    C = np.cov(A, rowvar=False)
    D = np.diag([1.0, 3.0, 0.2, 7.0])
    assert np.allclose(cov_to_cor(D @ C @ D), cov_to_cor(C), atol=1e-14)
    assert is_correlation(cov_to_cor(C))


@pytest.mark.parametrize(
    "X",
    [
        np.array([[1.0, 0.5], [0.4, 1.0]]),  # asymmetric
        np.array([[2.0, 0.5], [0.5, 1.0]]),  # diagonal not one
        np.array([[1.0, 1.0], [1.0, 1.0]]),  # singular
        np.array([[1.0, np.nan], [np.nan, 1.0]]),
        np.ones((2, 3)),
    ],
)
def test_is_correlation_rejects(X):
    assert not is_correlation(X)


def test_cholesky_jitter_rescues_semidefinite_and_rejects_indefinite():
    L = cholesky_jitter(np.ones((2, 2)), jitter=1e-8)
    assert np.allclose(L @ L.T, np.ones((2, 2)), atol=1e-7)
    with pytest.raises(NumericalError, match="test matrix"):
        cholesky_jitter(np.array([[1.0, 2.0], [2.0, 1.0]]), what="test matrix")


def test_upper_pairs_count():
    i, j = upper_pairs(5)
    assert len(i) == 10 and np.all(i < j)
