import numpy as np
import pytest

from s2lc.weights import generate_weights, load_weights

DESK_SEED = 7


@pytest.fixture(scope="session")
def desk_archive() -> bytes:
    return generate_weights("desk", DESK_SEED)


@pytest.fixture(scope="session")
def desk_weights(desk_archive):
    return load_weights(desk_archive)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
