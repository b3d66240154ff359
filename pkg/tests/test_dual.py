import numpy as np
import pytest
from hypothesis import given, strategies as st

from simbacl import dual as du

finite = st.floats(-2.0, 2.0, allow_nan=False)


def _fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _fd_hess(f, x, h=1e-4):
    d = x.size
    H = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            ei = np.zeros(d)
            ej = np.zeros(d)
            ei[i] = h
            ej[j] = h
            H[i, j] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h * h)
    return H


def composite(v):
    """Scalar function exercising most primitives; works for arrays and duals."""
    a, b = v[0], v[1]
    s = du.sigmoid(a * b + 0.3)
    e = du.exp(-du.square(a)) + du.log1p(du.exp(b))
    r = du.reciprocal(2.0 + s) * du.sqrt(1.5 + s)
    q = -du.expm1(-(1.0 + a * a))
    return du.log(e * r + q) + du.power(1.2 + s, 2.5) - a / (3.0 + b * b)


@given(finite, finite)
def test_gradient_matches_central_differences(a, b):
    x = np.array([a, b])
    out = composite(du.Dual.variables(x, 1))
    fd = _fd_grad(lambda z: float(composite(z)), x)
    assert np.allclose(du.gradient(out), fd, rtol=1e-6, atol=1e-7)


@given(finite, finite)
def test_hessian_matches_second_differences(a, b):
    x = np.array([a, b])
    out = composite(du.Dual.variables(x, 2))
    fd = _fd_hess(lambda z: float(composite(z)), x)
    assert np.allclose(du.hessian(out), fd, rtol=1e-4, atol=1e-5)


def test_value_equals_plain_evaluation():
    x = np.array([0.4, -1.1])
    assert float(du.value(composite(du.Dual.variables(x, 2)))) == pytest.approx(float(composite(x)), abs=1e-15)


def test_exp_derivatives_exact():
    x = du.Dual.variables(np.array([0.7]), 2)
    y = du.exp(x)[0]
    assert du.gradient(y)[0] == pytest.approx(np.exp(0.7), rel=1e-15)
    assert du.hessian(y)[0, 0] == pytest.approx(np.exp(0.7), rel=1e-15)


def test_log_of_zero_is_minus_inf():
    out = du.log(np.array([0.0, 1.0]))
    assert out[0] == -np.inf and out[1] == 0.0


def test_stack_where_sum_and_einsum():
    x = du.Dual.variables(np.array([1.0, 2.0]), 2)
    m = du.stack([x[0] * x[1], x[0] + x[1]])
    s = m.sum()
    assert float(s.val) == pytest.approx(5.0)
    assert np.allclose(du.gradient(s), [3.0, 2.0])
    assert np.allclose(du.hessian(s), [[0.0, 1.0], [1.0, 0.0]])
    w = du.where(np.array([True, False]), m, 0.0)
    assert np.allclose(w.val, [2.0, 0.0])
    mat = np.array([[1.0, 2.0], [3.0, 4.0]])
    v = du.matvec(mat, x)
    assert np.allclose(v.val, [5.0, 11.0])
    assert np.allclose(v.jac, mat)
    e = du.einsum("ij,j->i", mat, x)
    assert np.allclose(e.val, v.val) and np.allclose(e.jac, v.jac)


def test_logsumexp_stable():
    x = du.Dual.variables(np.array([1000.0, 1000.0]), 1)
    out = du.logsumexp(x)
    assert float(out.val) == pytest.approx(1000.0 + np.log(2.0))
    assert np.allclose(out.jac, [0.5, 0.5])
