import numpy as np
import pytest

from zfdelay.config import CsiMode, SystemParams, derive_budget, superframe_partition


@pytest.fixture(scope="session")
def fig_params():
    """Eight antennas, five users per slot, 20 dB, 15 dB uplink sounding."""
    return SystemParams(
        n_antennas=8,
        n_users_total=5,
        superframe_len=1,
        n_slot_symbols=400,
        n_ul_train=10,
        n_dl_train=10,
        p_total=100.0,
        p_uplink=10**1.5,
        arrival_rate=0.0,
        deadline=16,
        csi_mode=CsiMode.IMPERFECT,
    )


@pytest.fixture(scope="session")
def fig_budget(fig_params):
    return derive_budget(fig_params, 5)


@pytest.fixture(scope="session")
def pair_budget(fig_params):
    """Two co-scheduled users: the collapsed-bound regime."""
    return derive_budget(fig_params, 2)


@pytest.fixture(scope="session")
def fig_split(fig_params):
    return superframe_partition(fig_params)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(1234))
