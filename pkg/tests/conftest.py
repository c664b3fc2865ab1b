import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cogforest import FeatureMatrix, ForestParams, build_clf


@pytest.fixture
def rng():
    return np.random.default_rng(20240803)


def random_matrix(rng, n, d, labels=None, prefix="s"):
    feats = rng.normal(0.0, 1.0, size=(n, d))
    return FeatureMatrix([f"{prefix}{i}" for i in range(n)], feats, labels)


def random_forest(rng, n=40, d=3, label=0, prefix="s"):
    """A forest over clustered random points, radii scaled to the data."""
    centers = rng.normal(0.0, 4.0, size=(max(2, n // 12), d))
    feats = centers[rng.integers(0, len(centers), n)] + rng.normal(0.0, 0.5, (n, d))
    x = FeatureMatrix([f"{prefix}{i}" for i in range(n)], feats, np.full(n, label))
    params = ForestParams(1.5, 0.4)
    return build_clf(x, params), x, params
