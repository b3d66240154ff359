"""Empirical KL between composite likelihoods and the interaction bound.

``empirical_kl`` is the plug-in estimator that weights each evaluated
dataset by the likelihood assigned to it by the reference method.  The
comparison runner evaluates two composite-likelihood configurations on the same
simulated datasets with the same complement simulations (common random
numbers), block by block, and reports leave-one-dataset-out summaries.

``interaction_bound`` estimates the interaction bound on
KL(with feedback || without feedback) for one block: the expected
conditional variance of the block's influence on the rest of the system,
scaled by the kernel constants of the model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dual as du
from .errors import DataError, PartitionError
from .filtering import block_logliks, log_mean_exp, run_group, simulate_complements
from .partition import Partition
from .rng import derive_seed
from .simulate import ensure_outbreak


def empirical_kl(log_p, log_q) -> float:
    """Σ_e p_e (log p_e − log q_e) from log-evaluations at the same datasets."""
    log_p = np.asarray(log_p, dtype=float).reshape(-1)
    log_q = np.asarray(log_q, dtype=float).reshape(-1)
    if log_p.shape != log_q.shape:
        raise DataError(f"evaluation vectors differ in length: {log_p.size} vs {log_q.size}")
    if log_p.size == 0:
        raise DataError("need at least one evaluation")
    w = np.exp(log_p)
    keep = w > 0                                   # 0 * log(0/q) = 0
    return float(np.sum(w[keep] * (log_p[keep] - log_q[keep])))


def leave_one_out(log_p, log_q):
    """KL recomputed with each evaluation dropped in turn: (mean, sd, values)."""
    log_p = np.asarray(log_p, dtype=float).reshape(-1)
    log_q = np.asarray(log_q, dtype=float).reshape(-1)
    if log_p.shape != log_q.shape:
        raise DataError(f"evaluation vectors differ in length: {log_p.size} vs {log_q.size}")
    E = log_p.size
    if E < 2:
        v = np.array([empirical_kl(log_p, log_q)])
        return float(v[0]), 0.0, v
    vals = np.array([empirical_kl(np.delete(log_p, e), np.delete(log_q, e)) for e in range(E)])
    return float(vals.mean()), float(vals.std(ddof=1)), vals


# comparison runner -------------------------------------------------------------

@dataclass
class KLComparison:
    """Block-level evaluations of two methods on E shared datasets.

    ``log_p`` and ``log_q`` have shape (E, |units|): log-likelihoods of each
    unit block's observations under the reference and the approximation.
    """
    log_p: np.ndarray
    log_q: np.ndarray
    units: Partition
    per_block: np.ndarray          # KL per unit block, all datasets
    kl: float                      # mean over unit blocks
    loo_mean: float
    loo_sd: float
    seed: int


def _coarsest(fine: Partition, coarse: Partition):
    """Map each block of ``fine`` to the block of ``coarse`` containing it."""
    owner = np.empty(coarse.n_components, dtype=np.int64)
    for i, b in enumerate(coarse.blocks):
        owner[b] = i
    out = []
    for b in fine.blocks:
        o = np.unique(owner[b])
        if len(o) != 1:
            raise PartitionError("partitions are not nested: a fine block straddles coarse blocks")
        out.append(int(o[0]))
    return np.array(out)


def _unit_logliks(model, params, y, trajs, partition, variant, units):
    laws = model.laws(params)
    lls = block_logliks(model, laws, y, trajs, partition, variant)
    lm = np.asarray(du.value(log_mean_exp(lls, axis=0)))
    owner = _coarsest(partition, units)
    out = np.zeros(len(units))
    np.add.at(out, owner, lm)
    return out


def kl_comparison(model, params, T, E, P, seed, p_method=("feedback", None),
                  q_method=("no_feedback", None), min_infected=0) -> KLComparison:
    """Empirical KL(p || q) between two (variant, partition) methods.

    Both methods see the same E datasets and the same P complement
    simulations per dataset.  Blocks are compared on the coarser of the two
    partitions (fine-block log-likelihoods are summed into it).
    """
    n = model.n_components
    pv, pp = p_method
    qv, qp = q_method
    pp = pp if pp is not None else Partition.singletons(n)
    qp = qp if qp is not None else Partition.singletons(n)
    units = pp if len(pp) <= len(qp) else qp
    lp = np.zeros((E, len(units)))
    lq = np.zeros((E, len(units)))
    for e in range(E):
        _, obs = ensure_outbreak(model, params, T, derive_seed(seed, 1, e), min_infected)
        trajs = simulate_complements(model, params, T, P, derive_seed(seed, 2, e))
        lp[e] = _unit_logliks(model, params, obs.obs, trajs, pp, pv, units)
        lq[e] = _unit_logliks(model, params, obs.obs, trajs, qp, qv, units)
    per_block = np.array([empirical_kl(lp[:, k], lq[:, k]) for k in range(len(units))])
    if E >= 2:
        loo = np.array([np.mean([empirical_kl(np.delete(lp[:, k], e), np.delete(lq[:, k], e))
                                 for k in range(len(units))]) for e in range(E)])
        loo_mean, loo_sd = float(loo.mean()), float(loo.std(ddof=1))
    else:
        loo_mean, loo_sd = float(per_block.mean()), 0.0
    return KLComparison(lp, lq, units, per_block, float(per_block.mean()), loo_mean, loo_sd, seed)


# interaction bound --------------------------------------------------------------

@dataclass
class BoundEstimate:
    value: float
    per_step: np.ndarray           # (T,) averaged over simulations
    a_of_eps: float
    epsilon: float
    P: int


def interaction_bound(model, params, block, P, seed, T) -> BoundEstimate:
    """(a(ε)/N) Σ_t E[(1/N) Σ_{n∉K} s_max_n Var(d_{K,n}(x^K_{t-1}) | x^{∖K}_{[0:t-1]})].

    The conditional law of the block given the simulated complement comes
    from the complement-only filter; the outer expectation is a Monte Carlo
    average over ``P`` simulated complements.
    """
    constants = model.assumption_constants(params)
    members = np.asarray(block, dtype=np.int64).reshape(1, -1)
    if P < 1:
        raise ValueError("P must be >= 1")
    trajs = simulate_complements(model, params, T, P, seed)
    laws = model.laws(params)
    _, terms = run_group(model, laws, None, trajs, members, "feedback", constants=constants)
    per_step = terms[:, 0, :].mean(axis=0)
    n = model.n_components
    value = constants.a_of_eps / n * float(per_step.sum())
    return BoundEstimate(value, per_step, constants.a_of_eps, constants.epsilon, P)


theorem1_bound = interaction_bound
