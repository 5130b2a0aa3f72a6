import json
from pathlib import Path

import pytest

from empref.grid import make_uniform_grid
from empref.models import GaussianLocationModel, bimodal_truth, sample_dataset

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def oracles():
    return json.loads((FIXTURES / "oracles.json").read_text())


@pytest.fixture(scope="session")
def thresholds():
    return json.loads((FIXTURES / "acceptance_thresholds.json").read_text())


@pytest.fixture(scope="session")
def grid200():
    return make_uniform_grid(0.0, 4.0, 200)


@pytest.fixture(scope="session")
def gauss03():
    return GaussianLocationModel(0.3)


@pytest.fixture(scope="session")
def bimodal(grid200):
    return bimodal_truth(grid200)


@pytest.fixture(scope="session")
def data100(gauss03, bimodal):
    return sample_dataset(gauss03, bimodal, 100, seed=1)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
