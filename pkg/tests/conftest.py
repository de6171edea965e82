import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_complex(rng, shape, scale=2.0):
    return rng.uniform(-scale, scale, shape) + 1j * rng.uniform(-scale, scale, shape)
