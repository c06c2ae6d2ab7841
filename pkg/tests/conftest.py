import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from scaunmix.data import scale, synth_generate

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_scene():
    """K=3, F=12, N=60 noiseless scene, unscaled and scaled."""
    data, gt = synth_generate(3, 12, 60, seed=11)
    return data, scale(data), gt


def pytest_terminal_summary(terminalreporter):
    # one pass/fail line per acceptance criterion, when that module ran
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[number])
