import numpy as np
import pytest

from bioconvect.config import build_run, resolve_config
from bioconvect.grid import MacGrid
from bioconvect.models import (
    ChamberDomain,
    DimensionlessGroups,
    default_consumption_function,
)


@pytest.fixture
def unit_domain():
    return ChamberDomain(1.0, 1.0, 1.0)


@pytest.fixture
def groups():
    return DimensionlessGroups(S_c=1.0, gamma=0.5, chi=0.1, delta=1.0, beta=0.1)


@pytest.fixture
def bump():
    return default_consumption_function(0.45, 0.05)


@pytest.fixture
def grid4(unit_domain):
    return MacGrid.uniform(unit_domain, 4)


@pytest.fixture
def grid6(unit_domain):
    return MacGrid.uniform(unit_domain, (6, 5, 4))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_setup():
    """The shipped certified configuration on a 4^3 grid."""
    config = resolve_config("small_data")
    config.grid.cells = 4
    return build_run(config)
