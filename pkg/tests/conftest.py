"""Fixtures for pydiffbridge"""
import numpy as np
import pytest

from pydiffbridge.approximator import AdamConfig, NetworkConfig
from pydiffbridge.sde_core import TimeGrid


@pytest.fixture(name="rng")
def _rng() -> np.random.Generator:
    """Fixture for a seeded generator."""
    return np.random.default_rng(20240327)


@pytest.fixture(name="small_network")
def _small_network() -> NetworkConfig:
    """Fixture for a perceptron small enough for finite-difference checks."""
    return NetworkConfig(hidden=(8, 8), time_features=4, output_scale=1.0)


@pytest.fixture(name="fast_optimizer")
def _fast_optimizer() -> AdamConfig:
    """Fixture for Adam settings used in short training runs."""
    return AdamConfig(learning_rate=1e-2)


@pytest.fixture(name="short_grid")
def _short_grid() -> TimeGrid:
    """Fixture for a coarse bridge grid."""
    return TimeGrid.uniform(1.0, 8)
