import numpy as np
import pytest

from kinwkb import FlatMetric, kappa_model

_ACCEPTANCE_LINES = []


def record_acceptance(line: str):
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def kappa():
    return kappa_model(0.25)


@pytest.fixture(scope="session")
def flat1():
    return FlatMetric(1)


@pytest.fixture(scope="session")
def flat2():
    return FlatMetric(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
