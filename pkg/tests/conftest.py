import numpy as np
import pytest

from aftid import simulate
from aftid.data import Dataset


def make_dataset(n=60, sigma=0.5, seed=11, replicate=0):
    sc = simulate.paper_scenario(sigma=sigma, n=n, seed=seed)
    return simulate.simulate_dataset(sc, replicate=replicate).dataset


@pytest.fixture
def small_dataset():
    return make_dataset(n=60, seed=11)


@pytest.fixture
def medium_dataset():
    return make_dataset(n=150, seed=5)


@pytest.fixture
def two_subject_dataset():
    # the hand-computable case: unit covariate difference, times 1 and e
    return Dataset(
        v=[1.0, np.e],
        w=[1.0, np.e],
        delta1=[1, 1],
        delta2=[0, 0],
        delta3=[0, 0],
        x=[[0.0], [1.0]],
    )


@pytest.fixture
def paper_features():
    sc = simulate.paper_scenario()
    return {jk: sc.feature_names(jk) for jk in ("01", "02", "12")}
