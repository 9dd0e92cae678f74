import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gmss.data import load_partition
from gmss.graph import load_montage, scaled_laplacian

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def montage():
    return load_montage()


@pytest.fixture(scope="session")
def partition(montage):
    return load_partition(montage=montage)


@pytest.fixture(scope="session")
def SL(montage):
    return scaled_laplacian(montage)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
