"""Shared fixtures for the test suite."""

import numpy as np
import pytest

from quasilinear_welfare.domain.model import Dataset


def random_dataset(rng: np.random.Generator, T: int, K: int) -> Dataset:
    """Uniform prices in [0.5, 3] and quantities in [0, 3]."""
    return Dataset(
        prices=rng.uniform(0.5, 3.0, size=(T, K)),
        quantities=rng.uniform(0.0, 3.0, size=(T, K)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def single_obs():
    """x = 2 at p = 1."""
    return Dataset(prices=[[1.0]], quantities=[[2.0]])


@pytest.fixture
def crossing_pair():
    """Two observations with epsilon* = 0.5: (x, p) = (1, 1) and (2, 2)."""
    return Dataset(prices=[[1.0], [2.0]], quantities=[[1.0], [2.0]])


@pytest.fixture
def consistent_pair():
    """Two observations obeying the law of demand: (x, p) = (2, 1) and (1, 2)."""
    return Dataset(prices=[[1.0], [2.0]], quantities=[[2.0], [1.0]])


@pytest.fixture
def two_goods():
    """K=2 pair whose 2-cycle has mean 0.5."""
    return Dataset(prices=[[1.0, 1.0], [2.0, 1.0]], quantities=[[0.0, 2.0], [1.0, 2.0]])


@pytest.fixture
def make_dataset(rng):
    """Factory for random datasets drawn from the shared generator."""

    def factory(T: int, K: int) -> Dataset:
        return random_dataset(rng, T, K)

    return factory
