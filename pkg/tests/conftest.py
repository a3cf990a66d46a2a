import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from remixit.model import ModelArch, init_params

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

TINY = ModelArch(n_sources=2, depth=1, hidden_dim=4, context=1, fft_size=32, hop=8, depth_schedule=(1, 2, 4))


@pytest.fixture
def tiny_arch():
    return TINY


@pytest.fixture
def tiny_params():
    return init_params(TINY, seed=0, dtype=np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
