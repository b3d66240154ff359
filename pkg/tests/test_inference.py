import numpy as np
import pytest
from hypothesis import given, strategies as st

from simbacl.errors import NumericalError, OptimizationError
from simbacl.inference import (AdamConfig, BootstrapDraws, ConfidenceEllipsoid, GodambeMatrices,
                               GradientDescentConfig, _sym_inverse, adam_fit, adam_minimize, bootstrap_draws,
                               coverage_experiment, coverage_from_estimates, first_identity_residual,
                               gaussian_coverage, godambe, godambe_from_draws, minimize)
from simbacl.gradients import composite_value
from simbacl.models import SIS
from simbacl.parameters import ThetaMap
from simbacl.simulate import ensure_outbreak


def quadratic(center):
    center = np.asarray(center, dtype=float)
    return lambda th, step: (float(((th - center) ** 2).sum()), 2 * (th - center))


def test_adam_first_step_is_signed_learning_rate():
    cfg = AdamConfig(learning_rate=0.1, steps=1)
    res = adam_minimize(quadratic([3.0, -2.0]), np.zeros(2), cfg)
    assert np.allclose(res.theta, [0.1, -0.1], atol=1e-7)


def test_adam_and_descent_converge():
    res = adam_minimize(quadratic([1.0, 2.0]), np.zeros(2), AdamConfig(learning_rate=0.05, steps=800))
    assert np.allclose(res.theta, [1.0, 2.0], atol=1e-3)
    res = minimize(quadratic([1.0, 2.0]), np.zeros(2), GradientDescentConfig(learning_rate=0.1, steps=200))
    assert np.allclose(res.theta, [1.0, 2.0], atol=1e-8)
    assert res.trace[0] == pytest.approx(5.0)


def test_tail_average():
    res = minimize(quadratic([1.0]), np.zeros(1), GradientDescentConfig(learning_rate=0.5, steps=4,
                                                                        average_last=2))
    assert res.theta[0] == pytest.approx(1.0)
    assert res.path.shape == (5, 1)


def test_restart_and_failure():
    calls = {"n": 0}

    def flaky(th, step):
        calls["n"] += 1
        if calls["n"] <= 2:
            raise NumericalError("boom")
        return float(th @ th), 2 * th

    res = minimize(flaky, np.ones(2), AdamConfig(steps=5, max_restarts=3), seed=1)
    assert res.restarts == 2
    assert np.isnan(res.trace[0]) and np.isfinite(res.trace[-1])

    with pytest.raises(OptimizationError):
        minimize(lambda th, s: (np.nan, th), np.ones(2), AdamConfig(steps=5, restart_on_nonfinite=False))
    with pytest.raises(OptimizationError):
        minimize(lambda th, s: (np.inf, th), np.ones(2), AdamConfig(steps=5, max_restarts=2))


def test_config_validation():
    with pytest.raises(ValueError):
        AdamConfig(learning_rate=0)
    with pytest.raises(ValueError):
        GradientDescentConfig(steps=0)
    with pytest.raises(ValueError):
        AdamConfig(steps=3, average_last=4)


def test_ellipsoid_constants():
    e = ConfidenceEllipsoid(np.zeros(2), np.eye(2), 0.95)
    assert e.radius2 == pytest.approx(5.991464547107979, rel=1e-12)
    assert e.contains([2.3, 0.5]) and not e.contains([2.4, 0.5])
    iv = e.marginal_intervals()
    assert np.allclose(iv[:, 1], 1.959963984540054)
    assert e.marginal_contains([1.9, -2.0]).tolist() == [True, False]
    with pytest.raises(ValueError):
        ConfidenceEllipsoid(np.zeros(2), np.eye(3))


def test_godambe_from_draws_by_hand():
    rng = np.random.default_rng(0)
    bg = rng.standard_normal((50, 3, 2))
    hes = -np.repeat(np.eye(2)[None] * 2.0, 50, axis=0)
    d = BootstrapDraws(bg, hes, np.zeros(50), 0)
    plain = godambe_from_draws(d, "expected_plain")
    g = bg.sum(1)
    V = np.cov(g.T)
    assert np.allclose(plain.S, 2 * np.eye(2))
    assert np.allclose(plain.G, 4 * np.linalg.inv(V))
    bart = godambe_from_draws(d, "expected_bartlett")
    S = sum(np.outer(b[k], b[k]) for b in bg for k in range(3)) / 50
    Vb = sum(np.outer(x, x) for x in g) / 50
    assert np.allclose(bart.S, S)
    assert np.allclose(bart.G, S @ np.linalg.inv(Vb) @ S)
    assert np.allclose(bart.G, bart.G.T)
    with pytest.raises(ValueError):
        godambe_from_draws(BootstrapDraws(bg, None, np.zeros(50), 0), "expected_plain")


def test_rank_one_inverse_uses_ridge():
    v = np.array([1.0, 2.0])
    inv, ridge = _sym_inverse(np.outer(v, v))
    assert ridge > 0 and np.all(np.isfinite(inv))
    inv, ridge = _sym_inverse(np.diag([2.0, 4.0]))
    assert ridge == 0 and np.allclose(inv, np.diag([0.5, 0.25]))


def test_first_identity_residual():
    g = np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    assert np.allclose(first_identity_residual(g), [0.0, 0.0])
    with pytest.raises(ValueError):
        first_identity_residual(g[:1])


@given(st.integers(0, 1000))
def test_gaussian_coverage_near_nominal(seed):
    rep = gaussian_coverage(np.array([[2.0, 0.3], [0.3, 1.0]]), reps=400, seed=seed)
    assert abs(rep.joint["known"] - 0.95) < 5 * np.sqrt(0.95 * 0.05 / 400)


def test_coverage_from_estimates():
    rep = coverage_from_estimates([0.0], [[0.0], [5.0]], [np.eye(1), np.eye(1)])
    assert rep.joint["given"] == 0.5


@pytest.fixture(scope="module")
def small_fit():
    m = SIS(100, seed=0)
    tm = ThetaMap(m.layout, m.baseline(), {"beta_lambda": True})
    _, obs = ensure_outbreak(m, tm.base, 50, 1, min_infected=10)
    return m, tm, obs.obs


def test_adam_fit_improves_composite(small_fit):
    m, tm, y = small_fit
    start = tm.pack() + np.array([1.0, -1.0])
    res = adam_fit(m, tm, start, y, 5, config=AdamConfig(learning_rate=0.1, steps=80, average_last=20), seed=0)
    assert np.all(np.isfinite(res.trace))
    for s in (0, 1):
        assert composite_value(m, tm, res.theta, y, 50, "no_feedback", None, s) > \
            composite_value(m, tm, start, y, 50, "no_feedback", None, s)


def test_godambe_methods_positive_definite(small_fit):
    m, tm, y = small_fit
    th = tm.pack()
    draws = bootstrap_draws(m, tm, th, 20, 5, 6, seed=2, hessians=True)
    assert draws.block_gradients.shape == (6, 100, 2)
    for meth in ("expected_plain", "expected_bartlett"):
        g = godambe_from_draws(draws, meth)
        assert np.all(np.linalg.eigvalsh(g.G) > 0)
    obs = godambe(m, tm, th, P=5, method="observed_bartlett", y_observed=y, seed=3)
    assert obs.ridge > 0 and obs.B == 1
    with pytest.raises(ValueError):
        godambe(m, tm, th, method="observed_bartlett")
    with pytest.raises(ValueError):
        godambe(m, tm, th, method="sandwich", T=5)


def test_coverage_experiment_smoke():
    m = SIS(30, seed=1)
    tm = ThetaMap(m.layout, m.baseline(), {"beta_lambda": True})
    rep = coverage_experiment(m, tm, reps=2, T=15, P=3, B=3, methods=("expected_plain", "expected_bartlett"),
                              fit_config=AdamConfig(steps=5), seed=1)
    assert rep.reps == 2 and len(rep.rows) + rep.failures == 2
    assert set(rep.joint) == {"expected_plain", "expected_bartlett"}
    assert isinstance(GodambeMatrices(np.eye(1), np.eye(1), np.eye(1), "x", 1).to_dict(), dict)
