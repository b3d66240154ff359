import itertools
import math

import numpy as np
import pytest

from conftest import toy_data, toy_sis
from simbacl.errors import CapacityError
from simbacl.models import SEIR, emission_vector, initial_distribution, transition_row
from simbacl.oracle import (complement_paths, exact_component_marginal, exact_conditional_path_prob,
                            exact_filter, exact_loglik, loglik_by_enumeration, mixed_radix)


def forward_by_hand(model, params, y):
    """Textbook forward algorithm on the product space, per-component helpers only."""
    n, X = model.n_components, model.n_states
    configs = list(itertools.product(range(X), repeat=n))
    init = [initial_distribution(model, i, params) for i in range(n)]
    alpha = {c: math.prod(init[i][c[i]] for i in range(n)) for c in configs}
    ll = 0.0
    for t in range(y.shape[0]):
        rows = {c: [transition_row(model, i, c, params) for i in range(n)] for c in configs}
        em = [emission_vector(model, i, y[t, i], params) for i in range(n)]
        new = {}
        for c2 in configs:
            pred = sum(alpha[c] * math.prod(rows[c][i][c2[i]] for i in range(n)) for c in configs)
            new[c2] = pred * math.prod(em[i][c2[i]] for i in range(n))
        z = sum(new.values())
        ll += math.log(z)
        alpha = {c: v / z for c, v in new.items()}
    return ll


@pytest.mark.parametrize("n,T,seed", [(1, 3, 0), (2, 2, 1), (2, 4, 2), (3, 3, 3)])
def test_three_routes_agree(n, T, seed):
    m, p = toy_sis(n, seed)
    _, y = toy_data(m, p, T, seed)
    y = y.copy()
    y[0, 0] = -1
    a = exact_loglik(m, p, y)
    b = loglik_by_enumeration(m, p, y)
    c = forward_by_hand(m, p, y)
    assert a == pytest.approx(c, abs=1e-12)
    assert b == pytest.approx(c, abs=1e-12)


def test_seir_routes_agree():
    m = SEIR(2, seed=0)
    p = m.baseline()
    p["iota"] = np.array([0.5])
    _, y = toy_data(m, p, 3, 4)
    assert exact_loglik(m, p, y) == pytest.approx(forward_by_hand(m, p, y), abs=1e-12)


def test_all_missing_gives_zero():
    m, p = toy_sis(2)
    assert exact_loglik(m, p, -np.ones((3, 2), dtype=int)) == pytest.approx(0.0, abs=1e-14)


def test_filter_distribution_normalised():
    m, p = toy_sis(3, 1)
    _, y = toy_data(m, p, 3, 1)
    f = exact_filter(m, p, y)
    assert f.dist.sum() == pytest.approx(1.0)
    assert len(f.loglik_increments) == 3


def test_component_marginal_is_joint_with_others_missing():
    m, p = toy_sis(3, 5)
    _, y = toy_data(m, p, 3, 5)
    y2 = y.copy()
    y2[:, [1, 2]] = -1
    assert exact_component_marginal(m, p, y, [0]) == pytest.approx(exact_loglik(m, p, y2), abs=1e-14)


def test_complement_paths_weights_sum_to_one():
    m, p = toy_sis(3, 2)
    trajs, w = complement_paths(m, p, [1], 3)
    assert math.fsum(w) == pytest.approx(1.0, abs=1e-14)
    assert len(trajs) == 2 ** (2 * 3)


def test_conditional_path_probabilities_sum_to_one():
    m, p = toy_sis(2, 7)
    rest = np.array([[0], [1], [1]])
    tot = math.fsum(exact_conditional_path_prob(m, p, np.array(c).reshape(3, 1), rest, [0])
                    for c in itertools.product((0, 1), repeat=3))
    assert tot == pytest.approx(1.0, abs=1e-12)


def test_capacity_guard():
    assert mixed_radix(2, 3).tolist()[:4] == [[0, 0], [0, 1], [0, 2], [1, 0]]
    with pytest.raises(CapacityError):
        mixed_radix(30, 2)
