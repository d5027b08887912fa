import numpy as np
import pytest

from kfwkb.acceptance import Run
from kfwkb.hamilton import InitialData, Profile
from kfwkb.scenario import load_scenario


def init_1d(S0_poly, lo, hi, n, bumps=(), phi_support=None, taper=0.0):
    S0 = Profile(1, S0_poly, bumps)
    phi0 = Profile(1, [1.0], (), phi_support, taper)
    return InitialData(S0, phi0, np.linspace(lo, hi, n)[:, None])


@pytest.fixture(scope="session")
def heat_run():
    """Shared post-caustic heat benchmark (bundle, shock history, backward bundle are cached)."""
    return Run(load_scenario("heat_bump"))


@pytest.fixture(scope="session")
def dip_init():
    """S0 = 1 + exp(-a^2/2): min S0'' = -1 at a = 0, so the heat symbol folds at t* = 1/2."""
    return init_1d([1.0], -6.0, 6.0, 601, bumps=[{"amp": 1.0, "center": 0.0, "width": 1.0}])
