import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "suite", deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("suite")


@pytest.fixture
def grid20():
    from flowdiff.schedule import AgeGrid
    return AgeGrid.five_year()


@pytest.fixture
def theta_m():
    from flowdiff.fdm_det import model_schedule
    return model_schedule()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
