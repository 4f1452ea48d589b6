import numpy as np
import pytest

from cauchy_maps.kernel import builtin_kernel
from cauchy_maps.rng import stream


@pytest.fixture(scope="session")
def quad():
    return builtin_kernel("quad")


@pytest.fixture(scope="session")
def type2():
    return builtin_kernel("type2")


@pytest.fixture(scope="session")
def type2_exact():
    return builtin_kernel("type2-exact")


@pytest.fixture
def rng():
    return stream(12345, "tests", 0)


def pytest_configure(config):
    np.seterr(over="ignore", under="ignore")


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
