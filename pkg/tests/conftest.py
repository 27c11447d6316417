import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_endmembers(rng, L, R):
    """Random smooth-ish positive spectra for algebra tests."""
    base = rng.uniform(0.05, 1.0, size=(L, R))
    return base
