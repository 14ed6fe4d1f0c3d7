import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lddr.net import init_random_weights, shared_engine, standard_stages  # noqa: E402

# narrow network with the real geometry; forward passes cost a fraction of the full one
SMALL_CHANNELS = (16, 32, 48, 48, 256)


@pytest.fixture(scope="session")
def full_weights():
    return init_random_weights(11)


@pytest.fixture(scope="session")
def small_weights():
    return init_random_weights(5, channels=SMALL_CHANNELS)


@pytest.fixture(scope="session")
def small_engine(small_weights):
    return shared_engine(small_weights, standard_stages(channels=SMALL_CHANNELS))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
