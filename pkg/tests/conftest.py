import numpy as np
import pytest

from sbtt.tensorio import RngState, TimeSeriesBatch


@pytest.fixture
def rng():
    return RngState(1234).generator(0)


def make_batch(gen, shape=(3, 5, 4), p_obs=0.6, bin_width=0.01):
    values = gen.normal(size=shape)
    mask = gen.random(shape) < p_obs
    return TimeSeriesBatch(values, mask, bin_width * np.arange(shape[1]), bin_width)


@pytest.fixture
def batch(rng):
    return make_batch(rng)
