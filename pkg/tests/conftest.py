import numpy as np
import pytest

from psictl import van_der_pol
from psictl.hjb import HjbPolicy
from psictl.koopman import KoopmanPolicy


@pytest.fixture(scope="session")
def vdp():
    return van_der_pol()


@pytest.fixture(scope="session")
def vdp_koopman(vdp):
    # full preset scale; shared by unit and acceptance tests
    return KoopmanPolicy(cutoff=60, nz_levels=2, dt=1e-4).fit(vdp)


@pytest.fixture(scope="session")
def vdp_hjb(vdp):
    return HjbPolicy(lower=-2.0, upper=2.0, spacing=0.01, dt=1e-4,
                     cfl_safety=1.0).fit(vdp)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
