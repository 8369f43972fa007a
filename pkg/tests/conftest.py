import numpy as np
import pytest
from hypothesis import settings
from numba import njit

from smallnoise_mlmc.models import Observable, SdeModel

# numba compiles on first call, which would trip per-example deadlines
settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture
def identity():
    return Observable.coordinate(0)


@njit(cache=True)
def _ou_drift(x, out):
    out[0] = -x[0] + 0.5 * x[1]
    out[1] = -2.0 * x[1]


@njit(cache=True)
def _ou_diffusion(x, out):
    out[0, 0] = 1.0 + 0.1 * x[0]
    out[0, 1] = 0.3
    out[1, 0] = 0.0
    out[1, 1] = 0.5 * x[1]


@pytest.fixture
def vector_model():
    """Two-dimensional model with state-dependent, non-diagonal noise."""
    return SdeModel(2, 2, _ou_drift, _ou_diffusion, 0.2, (1.0, 0.5), 1.0, name="vector")


def gen(seed=0):
    return np.random.Generator(np.random.SFC64(seed))
