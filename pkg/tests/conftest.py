import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def brute_star_l2(X):
    """Squared L2 star discrepancy from the raw double sums (loops, no vectorization)."""
    n, d = X.shape
    c = 3.0 ** (-d)
    mid = sum(np.prod((1 - X[i] ** 2) / 2) for i in range(n))
    pair = sum(np.prod(1 - np.maximum(X[i], X[j])) for i in range(n) for j in range(n))
    return c - 2.0 / n * mid + pair / n**2


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
