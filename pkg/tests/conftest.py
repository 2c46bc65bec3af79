import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def random_correlation(Q, rng, df=None):
    """Correlation matrix of a random Gaussian sample; ``df`` controls spread."""
    df = df or Q + 5
    X = rng.standard_normal((df, Q)) @ np.linalg.cholesky(np.eye(Q) * 0.5 + 0.5)
    C = np.cov(X, rowvar=False)
    d = np.sqrt(np.diag(C))
    C = C / np.outer(d, d)
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 1.0)
    return C


def random_spd(Q, rng, scale=1.0):
    M = rng.standard_normal((Q, Q))
    return scale * (M @ M.T + Q * np.eye(Q)) / Q


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
