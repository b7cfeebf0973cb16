import numpy as np
import pytest

from bpldag.bpl import BplParams
from bpldag.conditionals import LinearGaussian
from bpldag.objective import InterventionalDataset


def random_params(n, rng, forbid_frac=0.0, scale=1.0):
    forbidden = rng.random((n, n)) < forbid_frac
    return BplParams(rng.normal(scale=scale, size=n), rng.normal(scale=scale, size=(n, n)), forbidden)


def random_linear(n, rng):
    return LinearGaussian(rng.normal(size=(n, n)), rng.normal(scale=0.3, size=n),
                          rng.normal(scale=0.3, size=n))


def random_batch(n, m, rng, regimes=True, weighted=False):
    X = rng.normal(size=(m, n))
    if regimes:
        intervened = {0: (), 1: (0,), 2: (1, n - 1)}
        labels = rng.integers(0, 3, size=m)
    else:
        intervened = {0: ()}
        labels = np.zeros(m, dtype=int)
    weight = rng.uniform(0.5, 2.0, size=m) if weighted else None
    return InterventionalDataset(X, labels, intervened, row_weight=weight)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
