"""
Shared fixtures and the slow-test switch
"""
import logging

import numpy as np
import pytest

from aslpinn.config import PhantomConfig, TrainConfig
from aslpinn.core.phantom import generate_phantom
from aslpinn.models.params import AcquisitionSpec, HaemodynamicParams


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run full-schedule recovery and noise-sweep tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full 50k-iteration fits and noise sweeps")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def quiet_logging():
    logging.getLogger("aslpinn").setLevel(logging.WARNING)
    yield


@pytest.fixture
def spec():
    return AcquisitionSpec()


@pytest.fixture
def reference_params():
    return HaemodynamicParams(cbf=0.01, at=600.0, t1b=1800.0)


@pytest.fixture
def quick_train():
    """Short schedule for tests that only exercise the training machinery"""
    return TrainConfig(tier_iterations=(20, 20, 10), log_every=10, history_stride=5)


@pytest.fixture
def small_phantom():
    return generate_phantom(PhantomConfig(width=4, height=4, seed=3))


@pytest.fixture
def noisy_phantom():
    return generate_phantom(PhantomConfig(width=5, height=5, noise_std=0.2, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
