import numpy as np
import pytest

from nalustock import autodiff as ad

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def scalar_probe(rng, shape):
    """Fixed random weights w so that f(y) = sum(w * y) is a well-scaled scalar."""
    w = ad.constant(rng.uniform(0.5, 1.5, size=shape))
    return lambda y: ad.sum(ad.mul(y, w))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
