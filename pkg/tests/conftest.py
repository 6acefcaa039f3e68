import numpy as np
import pytest

from firmsim.world import Firm, GridGeometry, SectorParams, build_world


def quiet_params(**kw):
    """Sector parameters with every stochastic and demographic effect switched off."""
    base = dict(epsilon=0.0, theta=0.0, sigma_phi=0.0, sigma_rho=0.0, spin_alpha=0.0, spin_beta=-1e9, s_crit=1.0)
    base.update(kw)
    return {s: SectorParams(**base) for s in range(1, 22)}


def random_world(n, ncols=20, nrows=15, seed=0, sectors=(1, 2, 3), year=2000):
    rng = np.random.default_rng(seed)
    firms = [
        Firm(i, int(rng.choice(sectors)), float(rng.integers(1, 50)),
             (int(rng.integers(0, ncols)), int(rng.integers(0, nrows))), year)
        for i in range(n)
    ]
    return build_world(firms, GridGeometry(ncols, nrows), year)


@pytest.fixture
def small_world():
    return random_world(200)
