import numpy as np
import pytest

from conftest import toy_data
from simbacl.errors import NumericalError
from simbacl.gradients import (composite_value, fd_gradient, fd_jacobian, frozen_trajectories, grad_composite,
                               hessian_composite)
from simbacl.models import SEIR, SIS
from simbacl.parameters import ThetaMap
from simbacl.partition import Partition


def rel_err(a, b, floor=1e-3):
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), floor))


def setup(model, T=4, seed=0):
    p = model.baseline()
    p["iota"] = np.array([0.1])
    # entries pinned to 0 or 1 (SEIR detection in S/E) stay fixed
    free = {b.name: ((p[b.name] > 0) & (p[b.name] < 1)).tolist() if b.kind == "unit" else True
            for b in model.layout}
    tm = ThetaMap(model.layout, p, free)
    _, y = toy_data(model, p, T, seed)
    theta = tm.pack()
    trajs = frozen_trajectories(model, tm, theta, T, 8, seed)
    return tm, y, theta, trajs


@pytest.mark.parametrize("variant", ["no_feedback", "feedback"])
@pytest.mark.parametrize("partition", [None, "pairs"])
def test_sis_gradient_vs_fd(variant, partition):
    m = SIS(4, seed=1)
    tm, y, theta, trajs = setup(m)
    part = None if partition is None else Partition.parse(partition, 4)
    rep = grad_composite(m, tm, theta, y, 8, variant, part, 0, trajectories=trajs)
    fd = fd_gradient(lambda th: composite_value(m, tm, th, y, 8, variant, part, 0, trajs), theta)
    assert rel_err(rep.gradient, fd) < 1e-5
    assert np.allclose(rep.block_gradients.sum(0), rep.gradient)


def test_seir_gradient_and_hessian_vs_fd():
    m = SEIR(3, seed=2)
    tm, y, theta, trajs = setup(m, T=3, seed=2)
    rep = hessian_composite(m, tm, theta, y, 8, "feedback", None, 0, trajectories=trajs)
    fd = fd_gradient(lambda th: composite_value(m, tm, th, y, 8, "feedback", None, 0, trajs), theta)
    assert rel_err(rep.gradient, fd) < 1e-5
    fdh = hessian_composite(m, tm, theta, y, 8, "feedback", None, 0, trajectories=trajs, method="fd")
    assert rel_err(rep.hessian, fdh.hessian, floor=1e-2) < 1e-4
    assert np.allclose(rep.hessian, rep.hessian.T, rtol=1e-9)


def test_compiled_and_generic_gradients_agree():
    m = SIS(6, seed=0)
    tm, y, theta, trajs = setup(m, T=5)
    a = hessian_composite(m, tm, theta, y, 8, "feedback", None, 0, trajectories=trajs, compiled=True)
    b = hessian_composite(m, tm, theta, y, 8, "feedback", None, 0, trajectories=trajs, compiled=False)
    assert np.allclose(a.gradient, b.gradient, rtol=1e-11, atol=1e-12)
    assert np.allclose(a.hessian, b.hessian, rtol=1e-9, atol=1e-11)


def test_same_seed_same_gradient():
    m = SIS(5, seed=0)
    tm, y, theta, _ = setup(m)
    a = grad_composite(m, tm, theta, y, 6, "no_feedback", None, 3)
    b = grad_composite(m, tm, theta, y, 6, "no_feedback", None, 3)
    assert np.array_equal(a.gradient, b.gradient)


def test_minus_inf_raises():
    m = SIS(2, seed=0)
    p = m.baseline()
    p["q"] = np.array([0.0, 0.0])
    tm = ThetaMap(m.layout, p, {"beta_lambda": True})
    y = np.array([[1, 0]])
    with pytest.raises(NumericalError):
        grad_composite(m, tm, tm.pack(), y, 3, "no_feedback", None, 0)


def test_fd_helpers():
    g = fd_gradient(lambda x: x[0] ** 2 + 3 * x[1], np.array([1.0, 2.0]))
    assert np.allclose(g, [2.0, 3.0])
    J = fd_jacobian(lambda x: np.array([x[0] * x[1], x[1]]), np.array([2.0, 3.0]))
    assert np.allclose(J, [[3.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        fd_gradient(lambda x: 0.0, np.zeros(1), h=0)
