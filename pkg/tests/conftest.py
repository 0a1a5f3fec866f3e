import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from simavg.data import Dataset

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: dict[int, str] = {}


def sin_data(n=100, p=4, seed=0, r2=0.8, beta=None):
    """Single-index sin-link sample with iid N(0,1) covariates."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    beta = np.r_[1.0, np.linspace(0.5, -0.5, p - 1)] if beta is None else np.asarray(beta, dtype=float)
    mu = np.sin(np.pi * X @ beta / 6.0)
    c = np.sqrt(np.var(mu) * (1 - r2) / r2)
    y = mu + c * rng.standard_normal(n)
    return Dataset(y, X), beta, mu


@pytest.fixture
def small_data():
    return sin_data(60, 3, seed=1)[0]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
