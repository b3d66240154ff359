import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from simbacl.models import SIS, SEIR, IndependentChains, SpatialSIS, SINR
from simbacl.simulate import sample_observations, sample_trajectory

settings.register_profile("simbacl", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("simbacl")


def toy_sis(n=2, seed=0, iota=0.3):
    m = SIS(n, seed=seed)
    p = m.baseline()
    p["iota"] = np.array([iota])
    p["beta0"] = np.array([-0.5, 0.3])
    return m, p


def toy_data(model, params, T, seed):
    traj = sample_trajectory(model, params, T, seed)
    obs = sample_observations(model, params, traj, seed)
    return traj, obs.obs


@pytest.fixture
def sis_toy():
    return toy_sis()


@pytest.fixture(params=["sis", "seir", "sis_spatial", "sinr", "independent"])
def any_small_model(request):
    n = 3
    m = {"sis": SIS, "seir": SEIR, "sis_spatial": SpatialSIS, "sinr": SINR,
         "independent": IndependentChains}[request.param](n, seed=1)
    return m, m.baseline()


# acceptance summary ------------------------------------------------------------

ACCEPTANCE = {}


def record(criterion, passed, detail, seconds):
    ACCEPTANCE.setdefault(criterion, []).append((passed, detail, seconds))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[k]
        ok = all(p for p, _, _ in parts)
        detail = "; ".join(d for _, d, _ in parts)
        secs = sum(t for _, _, t in parts)
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}  ({secs:.1f} s)")
