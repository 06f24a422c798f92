import inspect
import os
import sys

THIS_FILE = os.path.abspath(inspect.getsourcefile(lambda: None) or __file__)
THIS_DIR = os.path.dirname(THIS_FILE)
REPO_ROOT = os.path.dirname(THIS_DIR)

if REPO_ROOT not in sys.path:
    sys.path.insert(0, REPO_ROOT)

# never reach for the network from the test suite
os.environ.setdefault("MVNTEST_NO_PIP", "1")

import numpy as np
import pytest

import mvn_flow
import spectral_field


@pytest.fixture
def grid64():
    return spectral_field.make_grid(64)


@pytest.fixture
def grid128():
    return spectral_field.make_grid(128)


def band_limited(grid, seed=0, kmax=4, amplitude=0.1):
    """Random real field with modes 0 < |m| <= kmax, scaled to max|p| = amplitude"""
    return mvn_flow.initial_condition(
        grid, mvn_flow.ICConfig(kind="random", seed=seed, kmax=kmax, amplitude=amplitude)
    )


@pytest.fixture
def random_p64(grid64):
    return band_limited(grid64, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
