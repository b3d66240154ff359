import numpy as np
import pytest
from hypothesis import given, strategies as st

from simbacl import dual as du
from simbacl.errors import NegativeRateError, ParameterError, ProbabilityRangeError
from simbacl.models import SIS
from simbacl.parameters import ParamBlock, ThetaMap, check_block, to_natural, to_unconstrained


@given(st.floats(1e-6, 1 - 1e-6))
def test_logit_round_trip(p):
    u = to_unconstrained("unit", np.array([p]))
    assert float(to_natural("unit", u)[0]) == pytest.approx(p, rel=1e-9)


@given(st.floats(1e-8, 1e8))
def test_log_round_trip(r):
    u = to_unconstrained("positive", np.array([r]))
    assert float(to_natural("positive", u)[0]) == pytest.approx(r, rel=1e-12)


def test_check_block_errors_are_distinct():
    with pytest.raises(NegativeRateError):
        check_block(ParamBlock("iota", 1, "positive"), [-0.1])
    with pytest.raises(ProbabilityRangeError):
        check_block(ParamBlock("q", 2, "unit"), [0.5, 1.5])
    with pytest.raises(ParameterError):
        check_block(ParamBlock("b", 2), [1.0])
    with pytest.raises(ParameterError):
        check_block(ParamBlock("b", 1), [np.nan])
    assert NegativeRateError.code != ProbabilityRangeError.code


def test_theta_map_packs_only_free_entries():
    m = SIS(4)
    base = m.baseline()
    tm = ThetaMap(m.layout, base, {"beta_lambda": True, "q": [False, True]})
    assert tm.dim == 3
    assert tm.names == ["beta_lambda[0]", "beta_lambda[1]", "q[1]"]
    theta = tm.pack()
    nat = tm.natural_values(theta)
    for k in base:
        assert np.allclose(nat[k], base[k])


def test_theta_map_unpack_derivatives():
    m = SIS(4)
    tm = ThetaMap(m.layout, m.baseline(), {"iota": True, "q": True})
    theta = tm.pack()
    nat = tm.unpack(theta, order=2)
    iota = nat["iota"]
    assert du.is_dual(iota)
    # d exp(u)/du = exp(u)
    assert du.gradient(iota[0])[2] == pytest.approx(float(m.baseline()["iota"][0]))
    q0 = nat["q"][0]
    p = 0.6
    assert du.gradient(q0)[0] == pytest.approx(p * (1 - p))


def test_theta_map_rejects_wrong_length_and_boundary():
    m = SIS(4)
    tm = ThetaMap(m.layout, m.baseline(), {"q": True})
    with pytest.raises(ParameterError):
        tm.unpack(np.zeros(3))
    nat = m.baseline()
    nat["q"] = np.array([1.0, 0.4])
    with pytest.raises(ParameterError):
        tm.pack(nat)
