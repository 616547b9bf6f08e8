import numpy as np
import pytest
from hypothesis import settings

from fmip.milp import from_dense, toy_instance

settings.register_profile("fmip", deadline=None, max_examples=40)
settings.load_profile("fmip")


@pytest.fixture
def toy():
    return toy_instance()


@pytest.fixture
def toy_binary():
    return toy_instance(int_bound=1)


@pytest.fixture
def mixed3():
    """Two binaries and one continuous variable, optimum -3 at (1, 1, 0)."""
    return from_dense([[1.0, 1.0, 1.0], [0.0, 1.0, 2.0]], [2.0, 1.5], [-1.0, -2.0, 1.0],
                      [0.0, 0.0, 0.0], [1.0, 1.0, 2.0], num_int=2, name="mixed3")


@pytest.fixture
def rng():
    return np.random.default_rng(0)
