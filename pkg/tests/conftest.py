import numpy as np
import pytest

from twobubble.ground_state import closed_form_constants
from twobubble.linearized import solve_eigenpair
from twobubble.radial_core import build_grid


@pytest.fixture(scope="session")
def grid():
    return build_grid()


@pytest.fixture(scope="session")
def coarse():
    return build_grid(n_nodes=1024)


@pytest.fixture(scope="session")
def ep(grid):
    return solve_eigenpair(grid)


@pytest.fixture(scope="session")
def consts():
    return closed_form_constants(13)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config._acceptance_lines = {}


@pytest.fixture
def acceptance_record(request):
    def record(k, line):
        request.config._acceptance_lines[k] = line
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
