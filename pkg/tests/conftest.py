import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from moirelax import build_geometry, graphene_basis  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def graphene5():
    return build_geometry(graphene_basis(), np.radians(5.0), 1.0)


@pytest.fixture(scope="session")
def graphene11():
    return build_geometry(graphene_basis(), np.radians(1.1), 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
