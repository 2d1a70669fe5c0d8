from pathlib import Path

import numpy as np
import pytest

from cexrepair.network import load_nnet, random_network

DATA = Path(__file__).parent / "data"


@pytest.fixture
def acas_path():
    return DATA / "acas_fixture.nnet"


@pytest.fixture
def acas_net(acas_path):
    return load_nnet(acas_path)


@pytest.fixture
def small_net():
    return random_network([3, 8, 8, 4], seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(LINES):
            terminalreporter.write_line(line)
