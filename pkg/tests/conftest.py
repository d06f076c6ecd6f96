import numpy as np
import pytest

from csma_opt.functions import LogUtility
from csma_opt.graph import ConflictGraph, enumerate_schedules


@pytest.fixture
def path3():
    return ConflictGraph.path(3)


@pytest.fixture
def path3_set(path3):
    return enumerate_schedules(path3)


@pytest.fixture
def log_u():
    return LogUtility()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
