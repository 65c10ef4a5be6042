from importlib.resources import files

import numpy as np
import pytest

from ratingxva.calibration import CalibrationWeights, adjust_matrix, calibrate_piecewise
from ratingxva.ratings import FITCH_SCALE, load_market_data

FITCH = files("ratingxva") / "data" / "fitch"
TENORS = ("1m", "3m", "6m", "12m")

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE = []


def fitch_paths():
    return [FITCH / f"fitch_{t}.csv" for t in TENORS], FITCH / "fitch_pd_q.csv"


@pytest.fixture(scope="session")
def fitch_market():
    mats, pd = fitch_paths()
    return load_market_data(mats, pd, FITCH_SCALE)


@pytest.fixture(scope="session")
def fitch_adjusted(fitch_market):
    return [adjust_matrix(m) for m in fitch_market[0]]


@pytest.fixture(scope="session")
def fitch_model(fitch_market, fitch_adjusted):
    _, curve, schedule = fitch_market
    return calibrate_piecewise(fitch_adjusted, curve, schedule)


@pytest.fixture(scope="session")
def fitch_model_unpenalized(fitch_market, fitch_adjusted):
    _, curve, schedule = fitch_market
    return calibrate_piecewise(fitch_adjusted, curve, schedule, CalibrationWeights(m_p=np.inf))


def random_generator(rng, k, max_exit=5.0):
    """Absorbing-default generator with row exit rates uniform on [0, max_exit]."""
    g = np.zeros((k, k))
    for i in range(k - 1):
        w = rng.dirichlet(np.ones(k - 1))
        off = [j for j in range(k) if j != i]
        g[i, off] = w * rng.uniform(0, max_exit)
        g[i, i] = -g[i].sum()
    return g


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
