"""Derivatives of the Monte Carlo composite log-likelihood.

Parameters are lifted to forward-mode duals on the unconstrained scale of a
:class:`~simbacl.parameters.ThetaMap`.  The complement trajectories are
simulated once at the current parameter value and then held fixed, so the
derivative is that of a smooth function of θ for a frozen set of
simulations.  Finite differences with the same frozen simulations give an
independent check.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dual as du
from .errors import NumericalError
from .filtering import simba_loglik, simulate_complements


@dataclass
class GradientReport:
    gradient: np.ndarray
    value: float
    block_gradients: np.ndarray       # (|K|, d)
    hessian: np.ndarray | None = None
    seed: int | None = None
    P: int = 0


def frozen_trajectories(model, theta_map, theta, T, P, seed):
    return simulate_complements(model, theta_map.natural_values(theta), T, P, seed)


def composite_value(model, theta_map, theta, y, P, variant, partition, seed, trajectories=None,
                    compiled=True):
    """Composite log-likelihood as a plain float (no derivatives)."""
    params = theta_map.natural_values(theta)
    return simba_loglik(model, params, y, P, variant, partition, seed,
                        trajectories=trajectories, compiled=compiled).composite_loglik


def _evaluate(model, theta_map, theta, y, P, variant, partition, seed, order,
              trajectories, include_feedback_terms, compiled=True):
    theta = np.asarray(theta, dtype=float)
    y = model.check_observations(y)
    if trajectories is None:
        trajectories = frozen_trajectories(model, theta_map, theta, y.shape[0], P, seed)
    params = theta_map.unpack(theta, order=order)
    est = simba_loglik(model, params, y, P, variant, partition, seed, trajectories=trajectories,
                       include_feedback_terms=include_feedback_terms, compiled=compiled)
    if not np.isfinite(est.composite_loglik):
        raise NumericalError(f"composite log-likelihood is -inf (blocks {est.zero_blocks}); gradient undefined")
    return est


def _lift(est, d, order):
    if est.dual is None:                      # nothing depended on θ
        k = len(est.log_marginal)
        zero = du.Dual.constant(np.zeros(k), d, order)
        return zero.sum(), zero
    return est.dual, est.dual_blocks


def grad_composite(model, theta_map, theta, y, P, variant, partition, seed, trajectories=None,
                   include_feedback_terms=True, compiled=True) -> GradientReport:
    """∇θ of the composite log-likelihood with frozen simulations."""
    est = _evaluate(model, theta_map, theta, y, P, variant, partition, seed, 1,
                    trajectories, include_feedback_terms, compiled)
    tot, blocks = _lift(est, theta_map.dim, 1)
    return GradientReport(np.array(tot.jac, dtype=float), est.composite_loglik,
                          np.array(blocks.jac, dtype=float), None, seed, est.P)


def hessian_composite(model, theta_map, theta, y, P, variant, partition, seed, trajectories=None,
                      method="dual", h=1e-5, include_feedback_terms=True,
                      compiled=True) -> GradientReport:
    """Gradient and symmetrised Hessian (second-order duals or FD of the gradient)."""
    theta = np.asarray(theta, dtype=float)
    y = model.check_observations(y)
    if trajectories is None:
        trajectories = frozen_trajectories(model, theta_map, theta, y.shape[0], P, seed)
    if method == "dual":
        est = _evaluate(model, theta_map, theta, y, P, variant, partition, seed, 2,
                        trajectories, include_feedback_terms, compiled)
        tot, blocks = _lift(est, theta_map.dim, 2)
        hes = du.hessian(tot)
        return GradientReport(np.array(tot.jac, dtype=float), est.composite_loglik,
                              np.array(blocks.jac, dtype=float), hes, seed, est.P)
    if method != "fd":
        raise ValueError("method must be 'dual' or 'fd'")
    base = grad_composite(model, theta_map, theta, y, P, variant, partition, seed, trajectories,
                          include_feedback_terms, compiled)

    def grad(th):
        return grad_composite(model, theta_map, th, y, P, variant, partition, seed, trajectories,
                              include_feedback_terms, compiled).gradient

    hes = fd_jacobian(grad, theta, h)
    base.hessian = 0.5 * (hes + hes.T)
    return base


def fd_gradient(objective, theta, h=1e-5):
    """Central differences of a scalar objective, coordinate by coordinate."""
    if h <= 0:
        raise ValueError("h must be positive")
    theta = np.asarray(theta, dtype=float)
    out = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (objective(theta + e) - objective(theta - e)) / (2 * h)
    return out


def fd_jacobian(fun, theta, h=1e-5):
    """Central-difference Jacobian of a vector function; rows index outputs."""
    theta = np.asarray(theta, dtype=float)
    cols = []
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        cols.append((np.asarray(fun(theta + e)) - np.asarray(fun(theta - e))) / (2 * h))
    return np.stack(cols, axis=-1)
