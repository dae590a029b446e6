import warnings

import numpy as np
import pytest

from sidebandcool import presets
from sidebandcool.errors import RegimeWarning


@pytest.fixture(scope="session")
def silica():
    return presets.SILICA


@pytest.fixture(scope="session")
def calib_model():
    return presets.reference_tls_model()


@pytest.fixture(scope="session")
def cooling_model():
    return presets.cooling_tls_model()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _quiet_regime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RegimeWarning)
        yield
