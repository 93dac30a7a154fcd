import numpy as np
import pytest

from finthrust.plant import PlantConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def quiet_plant_config():
    """Default plant with noise and ripple switched off."""
    return PlantConfig().noiseless()


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[key])
