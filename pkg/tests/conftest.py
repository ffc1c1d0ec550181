import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from crosscbr.dataset import BundleDataset  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_dataset():
    # u0-b0, u0-b1, u1-b1 ; items shared across bundles
    return BundleDataset(
        3, 3, 4,
        user_bundle=[(0, 0), (0, 1), (1, 1), (2, 2)],
        user_item=[(0, 0), (0, 1), (1, 1), (1, 2), (2, 3)],
        bundle_item=[(0, 0), (0, 1), (1, 1), (1, 2), (2, 3)],
    )
