import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from d2dfl.errors import InfeasibleStartWarning
from d2dfl.simulation import InstanceConfig, build_instance

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_instance():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InfeasibleStartWarning)
        return build_instance(InstanceConfig(n=10, link_prob=0.3, seed=3))


@pytest.fixture(scope="session")
def medium_instance():
    return build_instance(InstanceConfig(n=20, link_prob=0.15, seed=5))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
