import os

import numpy as np
import pytest

from core.estimation.estimator import EvalGrid, cate_cross_fit, cate_full_sample
from core.simulation.dgp import gen_dgp1


def pytest_collection_modifyitems(config, items):
    if os.getenv("CATE_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="acceptance run, set CATE_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def dgp1_small():
    return gen_dgp1(n=400, p=10, seed=11)


@pytest.fixture(scope="session")
def small_grid():
    return EvalGrid.linspace(-1.0, 1.0, 41)


@pytest.fixture(scope="session")
def cross_fit_curve(dgp1_small, small_grid):
    return cate_cross_fit(dgp1_small.sample, folds=4, grid=small_grid, seed=3)


@pytest.fixture(scope="session")
def full_sample_curve(dgp1_small, small_grid):
    return cate_full_sample(dgp1_small.sample, grid=small_grid)


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)
