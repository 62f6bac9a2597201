import warnings

import numpy as np
import pytest

from scfield.electrostatics import SeriesOperators
from scfield.geometry import generate_sphere


@pytest.fixture(scope="session")
def sphere3():
    return generate_sphere(1.0, 3)


@pytest.fixture(scope="session")
def sphere3_ops(sphere3):
    return SeriesOperators(sphere3)


@pytest.fixture(scope="session")
def sphere2():
    return generate_sphere(1.0, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_regime_warnings():
    # regime warnings are asserted explicitly where they matter
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*is not small.*")
        yield
