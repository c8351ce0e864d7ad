import numpy as np
import pytest

from segtrap import (
    CA40,
    Config,
    TrapSetup,
    build_basis,
    build_sequence_spec,
    build_setup,
    characterize_well,
    superpose,
)


@pytest.fixture(scope="session")
def config():
    return Config()


@pytest.fixture(scope="session")
def basis(config):
    return build_basis(config)


@pytest.fixture(scope="session")
def setup(config) -> TrapSetup:
    return build_setup(config)


@pytest.fixture(scope="session")
def sequence_spec(config):
    return build_sequence_spec(config)


@pytest.fixture(scope="session")
def loading_well(basis, sequence_spec):
    """Characterized well of the default loading configuration."""
    return characterize_well(superpose(basis, sequence_spec.load_voltages), CA40)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
