import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from delaylearn import NetworkConfig, init_params

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def small_cfg():
    return NetworkConfig(n_in=6, n_hidden=4, n_out=3, sigma=2.0, d_max=9, tau_m=30.0, w_scale=3.0)


@pytest.fixture
def small_params(small_cfg):
    return init_params(small_cfg, seed=1)


def spikes(shape, rate=0.3, seed=0):
    return (np.random.default_rng(seed).random(shape) < rate).astype(float)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
