import logging

import numpy as np
import pytest

from densteer import model
from densteer.numerics import make_grid


@pytest.fixture(autouse=True)
def _quiet_solver_logs():
    logging.getLogger("densteer").setLevel(logging.ERROR)
    yield


@pytest.fixture
def market():
    return model.MarketParams(0.1, 0.1)


@pytest.fixture
def coarse_grid():
    return make_grid(0.0, 12.0, 61, 40)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
