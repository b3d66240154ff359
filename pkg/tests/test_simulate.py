import numpy as np
import pytest

from simbacl.errors import OutbreakError
from simbacl.models import SIS, IndependentChains
from simbacl.simulate import (ensure_outbreak, ever_infected, sample_observations, sample_trajectories,
                              sample_trajectory)


def test_shapes_and_alphabet(any_small_model):
    m, p = any_small_model
    tr = sample_trajectory(m, p, 5, seed=3)
    assert tr.states.shape == (6, m.n_components) and tr.horizon == 5
    assert tr.states.min() >= 0 and tr.states.max() < m.n_states
    obs = sample_observations(m, p, tr, seed=3)
    assert obs.obs.shape == (5, m.n_components)
    assert set(np.unique(obs.obs)) <= {0, 1}


def test_deterministic_and_index_keyed():
    m = SIS(6, seed=0)
    p = m.baseline()
    p["iota"] = np.array([0.5])
    a = sample_trajectories(m, p, 8, 11, np.arange(5))
    b = sample_trajectories(m, p, 8, 11, np.arange(5))
    assert np.array_equal(a, b)
    c = sample_trajectories(m, p, 8, 11, [3])
    assert np.array_equal(a[3], c[0])
    d = sample_trajectories(m, p, 8, 12, np.arange(5))
    assert not np.array_equal(a, d)


def test_empirical_transition_frequency():
    m = IndependentChains(1, seed=0)
    p = m.baseline()
    trans = np.asarray(m.laws(p)["transition"])
    x = sample_trajectories(m, p, 1, 5, np.arange(40000))
    x = x[:, :, 0].astype(int)
    for s in range(m.n_states):
        sel = x[:, 0] == s
        freq = np.mean(x[sel, 1] == 1)
        se = np.sqrt(trans[s, 1] * (1 - trans[s, 1]) / sel.sum())
        assert abs(freq - trans[s, 1]) < 4 * se


def test_detection_only_when_allowed():
    m = SIS(20, seed=1)
    p = m.baseline()
    p["q"] = np.array([0.0, 1.0])
    tr = sample_trajectory(m, p, 10, 2)
    obs = sample_observations(m, p, tr, 2)
    assert np.array_equal(obs.obs, tr.states[1:])


def test_ensure_outbreak():
    m = SIS(50, seed=0)
    p = m.baseline()
    tr, obs = ensure_outbreak(m, p, 30, 7, min_infected=3)
    assert ever_infected(tr.states) >= 3
    assert obs.attempts >= 1
    p["beta0"] = np.array([-50.0, 0.0])
    p["iota"] = np.array([1e-12])
    with pytest.raises(OutbreakError):
        ensure_outbreak(m, p, 3, 0, min_infected=1, max_attempts=5)
    with pytest.raises(ValueError):
        sample_trajectories(m, p, 0, 0, [0])
