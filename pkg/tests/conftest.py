import numpy as np
import pytest

from robot_workbench import fixtures


@pytest.fixture(scope="session")
def planar_rr():
    return fixtures.planar_rr()


@pytest.fixture(scope="session")
def arm7():
    return fixtures.lab7()


@pytest.fixture(scope="session")
def gauge6():
    return fixtures.identity_gauge_chain()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
