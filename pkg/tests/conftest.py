import numpy as np
import pytest

from dpsweep.schedule import build_linear_schedule

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def two_step():
    # beta = (0.1, 0.2): alpha_bar = (0.9, 0.72)
    return build_linear_schedule(2, 0.1, 0.2)


@pytest.fixture(scope="session")
def schedule_100():
    return build_linear_schedule(100)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
