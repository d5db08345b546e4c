import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# Property tests run numeric pipelines; wall-clock deadlines only add flake.
settings.register_profile(
    "suite",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture
def rng():
    return np.random.default_rng(0)
