import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parents[1]

# The 5-subject weighted fixture: ties at t=2, one zero weight.
FIVE = dict(
    T=np.array([1.0, 2.0, 2.0, 3.0, 4.0]),
    D=np.array([1.0, 1.0, 0.0, 1.0, 1.0]),
    Z=np.array([[0.5], [-1.0], [1.0], [2.0], [0.2]]),
    w=np.array([2.0, 1.0, 1.0, 0.0, 3.0]),
)


def random_cohort(rng, n, p, tie_grid=None, weights="random"):
    z = rng.normal(size=(n, p))
    beta = rng.normal(scale=0.5, size=p)
    t = rng.exponential(1.0 / np.exp(z @ beta))
    c = rng.exponential(1.5, size=n)
    T = np.minimum(t, c)
    if tie_grid:
        T = np.ceil(T * tie_grid) / tie_grid
    D = (t <= c).astype(float)
    if D.sum() == 0:
        D[0] = 1.0
    if weights == "random":
        w = rng.choice([0.0, 1.0, 2.0, 4.0], size=n, p=[0.2, 0.3, 0.3, 0.2])
        w[np.flatnonzero(D)[0]] = 1.0
    else:
        w = np.ones(n)
    return T, D, z, w


@pytest.fixture
def five():
    return FIVE


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
