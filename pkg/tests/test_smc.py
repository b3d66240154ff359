import numpy as np
import pytest

from conftest import toy_data, toy_sis
from simbacl.models import IndependentChains
from simbacl.oracle import exact_loglik
from simbacl.partition import Partition
from simbacl.smc import _merge_ancestors, apf_loglik, block_apf_loglik


def test_merge_ancestors_is_inverse_cdf():
    rng = np.random.default_rng(0)
    w = rng.random((3, 7))
    w /= w.sum(1, keepdims=True)
    u = np.sort(rng.random((3, 7)), axis=1)
    anc = _merge_ancestors(w, u)
    cdf = np.cumsum(w, axis=1)
    for k in range(3):
        expect = np.minimum(np.searchsorted(cdf[k], u[k] * cdf[k, -1], side="right"), 6)
        assert np.array_equal(anc[:, k], expect)


def test_apf_close_to_exact_on_toy():
    m, p = toy_sis(2, 0)
    _, y = toy_data(m, p, 4, 0)
    ex = exact_loglik(m, p, y)
    vals = [apf_loglik(m, p, y, 5000, seed=s)[0] for s in range(8)]
    mean, se = np.mean(vals), np.std(vals, ddof=1) / np.sqrt(8)
    assert abs(mean - ex) < 4 * se + 0.01


def test_single_block_apf_equals_apf():
    m, p = toy_sis(3, 1)
    _, y = toy_data(m, p, 5, 1)
    a, _ = apf_loglik(m, p, y, 200, seed=7)
    b, _ = block_apf_loglik(m, p, y, 200, Partition.parse("whole", 3), seed=7)
    assert a == b


def test_block_apf_exact_structure_on_independent_chains():
    m = IndependentChains(3, seed=0)
    p = m.baseline()
    _, y = toy_data(m, p, 5, 2)
    ex = exact_loglik(m, p, y)
    vals = [block_apf_loglik(m, p, y, 3000, None, seed=s)[0] for s in range(8)]
    se = np.std(vals, ddof=1) / np.sqrt(8)
    assert abs(np.mean(vals) - ex) < 4 * se + 0.01


def test_deterministic_and_diagnostics():
    m, p = toy_sis(2, 3)
    _, y = toy_data(m, p, 3, 3)
    a = apf_loglik(m, p, y, 100, seed=1)
    b = apf_loglik(m, p, y, 100, seed=1)
    assert a[0] == b[0]
    diag = a[1]
    assert not diag.failed
    assert 0 < diag.ess_min <= diag.ess_mean <= 100
    assert diag.system.particles.shape == (100, 2)


def test_impossible_observation_flags_failure():
    m, p = toy_sis(2, 0)
    p["q"] = np.array([0.0, 0.0])
    y = np.array([[1, 0], [0, 0]])
    ll, diag = apf_loglik(m, p, y, 50, seed=0)
    assert ll == -np.inf and diag.failed
    ll, diag = block_apf_loglik(m, p, y, 50, None, seed=0)
    assert ll == -np.inf and diag.failed and 0 in diag.failed_blocks


def test_missing_observations_give_zero():
    m, p = toy_sis(2, 0)
    y = -np.ones((3, 2), dtype=int)
    assert apf_loglik(m, p, y, 20, seed=0)[0] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        apf_loglik(m, p, y, 0)
