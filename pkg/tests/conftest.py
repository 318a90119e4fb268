import numpy as np
import pytest

from soilspec.synthetic import mixture_library


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_library():
    return mixture_library(n_samples=200, n_bands=128, n_vars=3, seed=7, with_coords=True)
