from dataclasses import replace

import pytest

from lightstore.configfile import default_config


@pytest.fixture(scope="session")
def loaded():
    return default_config()


@pytest.fixture(scope="session")
def config(loaded):
    return loaded.config


@pytest.fixture(scope="session")
def sequence(loaded):
    return loaded.sequence


@pytest.fixture()
def noiseless(loaded):
    return replace(loaded, config=replace(loaded.config, trace_noise_sigma=0.0))
