import numpy as np
import pytest

from isac_ee.config import SystemConfig
from isac_ee.sysmodel import PowerAllocation, build_geometry, gen_channels


# criterion lines from the acceptance module, echoed in the terminal summary
CRITERIA: list = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)


def random_allocation(rng, k, q, scale=1.0):
    xi = scale * rng.uniform(0.1, 1.0, (k, q))
    gamma = rng.uniform(0.05, 0.95, (k, q))
    return PowerAllocation.from_split(xi, gamma)


@pytest.fixture
def desk():
    return SystemConfig.desk()


@pytest.fixture
def desk_instance(desk):
    rng = np.random.default_rng(7)
    geo = build_geometry(desk)
    ch = gen_channels(desk, rng)
    alloc = random_allocation(rng, desk.k_users, desk.q_subcarriers, 2.0)
    return desk, geo, ch, alloc


@pytest.fixture
def medium_instance():
    """Nt=Nr=16, K=3, Q=4."""
    cfg = SystemConfig.desk(n_th=4, n_tv=4, n_rh=4, n_rv=4, k_users=3, q_subcarriers=4)
    rng = np.random.default_rng(11)
    geo = build_geometry(cfg)
    ch = gen_channels(cfg, rng)
    alloc = random_allocation(rng, 3, 4, 2.0)
    return cfg, geo, ch, alloc
