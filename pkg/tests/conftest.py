import numpy as np
import pytest


def random_disk(rng, n, rmax=0.95):
    r = rmax * np.sqrt(rng.random(n))
    return r * np.exp(2j * np.pi * rng.random(n))


def random_spd(rng, n, d=3, scale=1.0):
    x = rng.normal(size=(n, d, d)) * scale
    sym = 0.5 * (x + np.swapaxes(x, -1, -2))
    w, v = np.linalg.eigh(sym)
    return np.einsum("...ij,...j,...kj->...ik", v, np.exp(w), v)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# lines reported by the acceptance module, echoed after the test summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
