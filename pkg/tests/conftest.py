import numpy as np
import pytest

from bbmpe.environment import PeriodicRate
from bbmpe.offspring import OffspringLaw


@pytest.fixture(scope="session")
def const_g():
    return PeriodicRate.constant(0.5)


@pytest.fixture(scope="session")
def sin_g():
    return PeriodicRate.sinusoidal(0.5, 0.25)


@pytest.fixture(scope="session")
def binary():
    return OffspringLaw.binary()


def z_score(sample, target):
    sample = np.asarray(sample, dtype=float)
    se = sample.std(ddof=1) / np.sqrt(sample.size)
    return abs(sample.mean() - target) / se
