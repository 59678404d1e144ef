import numpy as np
import pytest

from weakkam import dynamics


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


@pytest.fixture(scope="session")
def pendulum():
    return dynamics.pendulum_model()


@pytest.fixture(scope="session")
def free():
    return dynamics.free_model()


@pytest.fixture(scope="session")
def free2d():
    return dynamics.free_model(dim=2)
