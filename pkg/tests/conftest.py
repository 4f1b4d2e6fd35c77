import math

import numpy as np
import pytest

from soen.analysis.experiments import load_tables
from soen.core import SourceFunction, SourceKind

TWO_PI = 2.0 * math.pi

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda x: int(x.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_log(request):
    """List collecting one PASS/FAIL line per acceptance criterion."""
    return request.config.stash[ACCEPTANCE_LINES]


def constant_table(g0: float, biases=(1.5, 2.0), kind=SourceKind.DENDRITE) -> SourceFunction:
    """g = g0 wherever phi > 0.05, zero below."""
    phi = np.linspace(0.0, 0.5, 11)
    s = np.linspace(0.0, 1.0, 5)
    plane = np.where(phi[:, None] > 0.05, g0, 0.0) * np.ones((1, s.size))
    return SourceFunction(phi, s, biases, np.stack([plane] * len(biases)), kind=kind)


def flat_table(g0: float, biases=(1.5, 2.0)) -> SourceFunction:
    """g = g0 everywhere (including phi = 0)."""
    phi = np.array([0.0, 0.5])
    s = np.array([0.0, 2.0])
    return SourceFunction(phi, s, biases, np.full((len(biases), 2, 2), g0))


def zero_table(biases=(1.5, 2.0)) -> SourceFunction:
    return flat_table(0.0, biases)


@pytest.fixture(scope="session")
def tables():
    return load_tables()


@pytest.fixture(scope="session")
def gd(tables):
    return tables.gd
