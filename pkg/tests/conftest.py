import numpy as np
import pytest

from polarqh.geometry import PolarGrid
from polarqh.madelung import PhysicalParams
from polarqh.states import oscillator_params


@pytest.fixture(scope="session")
def params():
    """Natural units, oscillator potential."""
    return oscillator_params()


@pytest.fixture(scope="session")
def free_params():
    return PhysicalParams(m=1.0, hbar=1.0, potential=None)


@pytest.fixture(scope="session")
def grid_small():
    """Cheap grid for structural tests."""
    return PolarGrid.cell_centered(200, 32, 8.0)


@pytest.fixture(scope="session")
def grid_medium():
    return PolarGrid.cell_centered(800, 128, 8.0)


def weighted_quantile_radius(spec, q=0.99):
    """Radius enclosing a probability quantile of a radial profile."""
    pdf = spec.r * spec.density()
    cdf = np.cumsum(pdf)
    cdf = cdf / cdf[-1]
    return float(np.interp(q, cdf, spec.r))
