import numpy as np
import pytest

from racecma import ScenarioConfig, desk_scenario


@pytest.fixture(scope="session")
def desk() -> ScenarioConfig:
    return desk_scenario()


@pytest.fixture(scope="session")
def paper_scale() -> ScenarioConfig:
    return ScenarioConfig()


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
