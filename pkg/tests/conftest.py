import numpy as np
import pytest

from pierlab.config import build_setup, default_config
from pierlab.envfields import DEFAULT_ROUTES, build_basin


@pytest.fixture(scope="session")
def env():
    return build_basin()


@pytest.fixture(scope="session")
def routes():
    return {r.name: r for r in DEFAULT_ROUTES}


@pytest.fixture(scope="session")
def setup():
    return build_setup(default_config())


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
