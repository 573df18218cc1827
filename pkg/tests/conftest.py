import numpy as np
import pytest

from vflock.fitness import FitnessParams
from vflock.flock import DynamicsBounds, VGeometry


@pytest.fixture
def fp() -> FitnessParams:
    return FitnessParams()


@pytest.fixture
def bounds() -> DynamicsBounds:
    return DynamicsBounds()


@pytest.fixture
def geometry() -> VGeometry:
    return VGeometry()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240117)
