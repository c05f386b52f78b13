import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pbradar.signal_core import ComplexBaseband, make_fm_surrogate

settings.register_profile("default", max_examples=30, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def noise_stream(n, seed=0, fs=1000.0, carrier_hz=100e6):
    rng = np.random.default_rng(seed)
    x = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)
    return ComplexBaseband(x, fs, carrier_hz)


@pytest.fixture
def white():
    return noise_stream(4096, seed=3)


@pytest.fixture
def fm():
    return make_fm_surrogate(0.5, 40e3, 100e3, seed=11)
