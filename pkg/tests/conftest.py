import numpy as np
import pytest

from fedsim.data import generate_synthetic
from fedsim.nn import ModelArch


@pytest.fixture(scope="session")
def tiny_fed():
    # 12 clients x 20 examples, 4 classes, 6x6 pixels
    return generate_synthetic(5, 12, 20, 4, 6)


@pytest.fixture(scope="session")
def tiny_arch():
    return ModelArch.mlp_small((6, 6), 4)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
