import numpy as np
import pytest

from qmeta.model import CavityParams, SystemConfig

NU_C = 5755.0


@pytest.fixture
def cavity():
    return CavityParams(NU_C, 30.0, 30.0, 30.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_system(rng, n, nu_c=NU_C, spread=200.0, signed=False):
    """Random dissipative configuration with N qubits around ``nu_c``."""
    cav = CavityParams(nu_c, rng.uniform(0.5, 40), rng.uniform(0, 40), rng.uniform(0, 40))
    eps = nu_c + rng.uniform(-spread, spread, n)
    gam = rng.uniform(0.1, 5.0, n)
    g = rng.uniform(5, 60, n)
    if signed:
        g = g * rng.choice([-1.0, 1.0], n)
    return SystemConfig.from_arrays(cav, eps, gam, g)
