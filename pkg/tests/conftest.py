import numpy as np
import pytest

from rampsched.process import Bounds, ProcessParams
from rampsched.transform import fit_operating_strategy


@pytest.fixture(scope="session")
def params():
    return ProcessParams()


@pytest.fixture(scope="session")
def bounds():
    return Bounds()


@pytest.fixture(scope="session")
def strategy_fit(params, bounds):
    return fit_operating_strategy(params, bounds)


@pytest.fixture(scope="session")
def strategy(strategy_fit):
    return strategy_fit[0]
