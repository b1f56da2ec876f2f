import numpy as np
import pytest

from slic.model import SlicModel


@pytest.fixture(scope="session")
def tiny_model():
    return SlicModel.from_seed("tiny", seed=3)


@pytest.fixture(scope="session")
def canonical_model():
    return SlicModel.from_seed("canonical", seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
