import numpy as np
import pytest

from risekit import Image


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def random_image(rng):
    """A small random RGB image."""
    return Image(rng.random((12, 16, 3)).astype(np.float32))


def make_image(height, width, seed=0):
    rng = np.random.default_rng(seed)
    return Image(rng.random((height, width, 3)).astype(np.float32))
