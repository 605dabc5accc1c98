import numpy as np
import pytest

from construction import spectral_grid as sg
from construction.brownian import StoppingData, sample_path


@pytest.fixture
def grid():
    return sg.GridSpec(2, 32, 17)


@pytest.fixture
def fine_grid():
    return sg.GridSpec(2, 64, 17)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_ensemble():
    """Sampled paths that are never stopped, one per seed."""
    def _make(grid, seeds=(3,)):
        return [(sample_path(seed, grid.n_t, grid.d), StoppingData(0.1, np.inf, 1., grid.n_t - 1))
                for seed in seeds]
    return _make
