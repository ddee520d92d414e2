import numpy as np
import pytest

from eventssl.dataset import FeatureDataset


def make_blob_dataset(n_per=(20, 20, 20, 14), d=4, spread=1.6, seed=0):
    """Four overlapping Gaussian classes as a feature table."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, spread, size=(len(n_per), d))
    X = np.vstack([rng.normal(c, 1.0, size=(n, d)) for c, n in zip(centers, n_per)])
    Y = np.repeat(np.arange(1, len(n_per) + 1), n_per)
    perm = rng.permutation(len(Y))
    return FeatureDataset(X[perm], Y[perm], [f"x{j}" for j in range(d)],
                          [f"ev{i:03d}" for i in range(len(Y))], {"d": d})


@pytest.fixture
def blob_dataset():
    return make_blob_dataset()
