import numpy as np
import pytest

from cellfree_ra.channel import PilotPlan, lmmse_estimate
from cellfree_ra.geometry import Layout, NetworkConfig, NetworkRealization, TrafficModel, form_clusters
from cellfree_ra.evaluation import draw_scenario

SMALL = NetworkConfig(Q=7, N=2, M=2, user_density=25.0, tau_p=4, seed=5)


def toy_network(du_xy, user_xy, gain, *, Q=1, du_cu=None, rho=1.0):
    """Hand-placed DUs and users with a prescribed normalized gain matrix."""
    layout = Layout.hexagonal(Q, 500.0)
    du_xy = np.asarray(du_xy, dtype=float)
    du_cu = np.zeros(len(du_xy), dtype=int) if du_cu is None else np.asarray(du_cu)
    tm = TrafficModel("uniform", 1.0, np.zeros((0, 2)), 50.0, layout.area_km2)
    real = NetworkRealization(layout, du_xy, du_cu, np.asarray(user_xy, dtype=float), tm)
    form_clusters(real, np.asarray(gain, dtype=float), rho)
    return real


def orthogonal_estimates(D, M, seed=0):
    n_u = D.shape[1]
    plan = PilotPlan([np.arange(n_u)], np.arange(n_u), max(n_u, 1))
    return lmmse_estimate(D, plan, M, 1.0, np.random.default_rng(seed))


@pytest.fixture(scope="session")
def small_scenario():
    return draw_scenario(SMALL, 0)


ACCEPTANCE_LINES: dict = {}


def report(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
