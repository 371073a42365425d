import numpy as np
import pytest

from proxguide.harness.config import load_config
from proxguide.schedule import linear_beta_schedule, subsample


@pytest.fixture(scope="session")
def base_schedule():
    return linear_beta_schedule()


@pytest.fixture(scope="session")
def schedule50(base_schedule):
    return subsample(base_schedule, 50)


@pytest.fixture(scope="session")
def run_config():
    return load_config()


@pytest.fixture(scope="session")
def scenario(run_config):
    """Canonical 3-component, 16x16 mixture scenario from the bundled config."""
    return run_config.scenario("mixture")


@pytest.fixture(scope="session")
def attention_scenario(run_config):
    return run_config.scenario("attention")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
