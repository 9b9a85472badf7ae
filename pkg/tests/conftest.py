import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


def random_probability_map_data(rng, shape):
    return rng.random((3,) + tuple(shape)).astype(np.float32)
