"""Brute-force references for small instances.

Nothing here is meant to be fast: the joint forward algorithm runs on the
full product space X^N and the path sums enumerate every latent trajectory.
All arithmetic is linear-space with compensated (``math.fsum``) summation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dual as du
from .errors import CapacityError, UndefinedConditionalError
from .models import MISSING

JOINT_CAP = 2 ** 20
PATH_CAP = 2 ** 20


def mixed_radix(n_digits, base, cap=JOINT_CAP):
    """All base-``base`` digit vectors of length ``n_digits``, first digit slowest."""
    size = base ** n_digits
    if size > cap:
        raise CapacityError(f"{size} joint configurations exceed the cap of {cap}")
    codes = np.arange(size)
    digits = np.empty((size, n_digits), dtype=np.int64)
    for i in range(n_digits - 1, -1, -1):
        digits[:, i] = codes % base
        codes //= base
    return digits


def _laws(model, params):
    return {k: (du.value(v) if du.is_dual(v) else v) for k, v in model.laws(params).items()}


def _fsum(x, axis=-1):
    x = np.moveaxis(np.asarray(x, dtype=float), axis, -1)
    flat = x.reshape(-1, x.shape[-1])
    return np.array([math.fsum(r) for r in flat]).reshape(x.shape[:-1])


@dataclass
class JointFilter:
    dist: np.ndarray
    loglik_increments: list = field(default_factory=list)

    @property
    def loglik(self):
        return math.fsum(self.loglik_increments)


def joint_transition(model, laws, states):
    """Transition matrix over the joint space enumerated by ``states``."""
    rows = model.transition_probs(laws, states)            # (S, N, X)
    n = model.n_components
    trans = np.ones((len(states), len(states)))
    for i in range(n):
        trans *= rows[:, i, :][:, states[:, i]]
    return trans


def joint_transition_rows(model, laws, states, lo, hi):
    rows = model.transition_probs(laws, states[lo:hi])
    trans = np.ones((len(rows), len(states)))
    for i in range(model.n_components):
        trans *= rows[:, i, :][:, states[:, i]]
    return trans


def exact_filter(model, params, y) -> JointFilter:
    """Forward algorithm on X^N; returns final filter and per-step increments."""
    y = model.check_observations(y)
    laws = _laws(model, params)
    states = mixed_radix(model.n_components, model.n_states)
    init = np.prod(laws["initial"][np.arange(model.n_components), states], axis=1)
    small = len(states) <= 4096
    trans = joint_transition(model, laws, states) if small else None
    dist = init
    incs = []
    for t in range(y.shape[0]):
        if len(states) <= 512:
            pred = _fsum(dist[:, None] * trans, axis=0)
        elif small:
            pred = dist @ trans
        else:
            pred = np.zeros(len(states))
            for lo in range(0, len(states), 256):
                pred += dist[lo:lo + 256] @ joint_transition_rows(model, laws, states, lo, lo + 256)
        em = model.emission(laws, y[t])                      # (N, X)
        lik = np.prod(em[np.arange(model.n_components), states], axis=1)
        u = pred * lik
        z = math.fsum(u)
        if z <= 0:
            incs.append(-math.inf)
            return JointFilter(u, incs)
        incs.append(math.log(z))
        dist = u / z
    return JointFilter(dist, incs)


def exact_loglik(model, params, y) -> float:
    return exact_filter(model, params, y).loglik


def exact_component_marginal(model, params, y, block) -> float:
    """log p(y^K) with every observation outside ``block`` made uninformative."""
    y = np.array(model.check_observations(y))
    mask = np.ones(model.n_components, dtype=bool)
    mask[np.asarray(block)] = False
    y[:, mask] = MISSING
    return exact_loglik(model, params, y)


# path enumeration ------------------------------------------------------------

def path_probs(model, laws, paths):
    """Latent-path probabilities p(x_{[0:L-1]}) for paths of shape (M, L, N)."""
    paths = np.asarray(paths)
    n = model.n_components
    idx = np.arange(n)
    factors = [laws["initial"][idx, paths[:, 0]]]
    for t in range(1, paths.shape[1]):
        rows = model.transition_probs(laws, paths[:, t - 1])
        factors.append(np.take_along_axis(rows, paths[:, t, :, None], -1)[..., 0])
    return np.prod(np.concatenate(factors, axis=1), axis=1)


def emission_probs(model, laws, paths, y):
    """Π_t Π_n p(y_t^n | x_t^n) for paths (M, T+1, N)."""
    em = model.emission(laws, y)                             # (T, N, X)
    x = paths[:, 1:]
    vals = np.take_along_axis(em[None], x[..., None], -1)[..., 0]
    return np.prod(vals.reshape(len(paths), -1), axis=1)


def enumerate_paths(model, length, cap=PATH_CAP):
    digits = mixed_radix(length * model.n_components, model.n_states, cap)
    return digits.reshape(-1, length, model.n_components)


def loglik_by_enumeration(model, params, y) -> float:
    """log of the full path sum  Σ_x p(x_0) Π p(x_t|x_{t-1}) p(y_t|x_t)."""
    y = model.check_observations(y)
    laws = _laws(model, params)
    paths = enumerate_paths(model, y.shape[0] + 1)
    w = path_probs(model, laws, paths) * emission_probs(model, laws, paths, y)
    return math.log(math.fsum(w))


def _block_paths(model, traj, block, length):
    """Every block path on [0:length-1] spliced into a copy of ``traj``."""
    block = np.asarray(block)
    k = len(block)
    digits = mixed_radix(length * k, model.n_states, PATH_CAP).reshape(-1, length, k)
    paths = np.repeat(np.asarray(traj)[None, :length].astype(np.int64), len(digits), axis=0)
    paths[:, :, block] = digits
    return paths


def no_feedback_by_enumeration(model, params, y, traj, block) -> float:
    """Block likelihood with the complement plugged into the kernel, summed over block paths."""
    y = model.check_observations(y)
    laws = _laws(model, params)
    block = np.asarray(block)
    T = y.shape[0]
    paths = _block_paths(model, traj, block, T + 1)
    w = laws["initial"][block, paths[:, 0, block]].prod(axis=1)
    for t in range(1, T + 1):
        rows = model.transition_probs(laws, paths[:, t - 1])[:, block]
        w = w * np.take_along_axis(rows, paths[:, t, block, None], -1)[..., 0].prod(axis=1)
    em = model.emission(laws, y[:, block], comp=np.broadcast_to(block, (T, len(block))))
    w = w * np.take_along_axis(em[None], paths[:, 1:, block, None], -1)[..., 0].reshape(len(paths), -1).prod(axis=1)
    return _log(math.fsum(w))


def block_conditional_by_ratio(model, laws, traj, block, length):
    """p(x^K_{[0:L-1]} | x^{\\K}_{[0:L-1]}) for every block path, via joint ratios."""
    paths = _block_paths(model, traj, block, length)
    joint = path_probs(model, laws, paths)
    denom = math.fsum(joint)
    if denom <= 0:
        raise UndefinedConditionalError("the complement path has probability zero")
    return paths, joint / denom


def feedback_by_enumeration(model, params, y, traj, block) -> float:
    """log p(y^K | x^{\\K}_{[0:T-1]}) summing over block paths with exact conditionals."""
    y = model.check_observations(y)
    laws = _laws(model, params)
    block = np.asarray(block)
    T = y.shape[0]
    paths, cond = block_conditional_by_ratio(model, laws, traj, block, T)
    rows = model.transition_probs(laws, paths[:, T - 1])[:, block]          # (M, k, X)
    finals = mixed_radix(len(block), model.n_states)                       # (C, k)
    last = np.ones((len(paths), len(finals)))
    for j in range(len(block)):
        last *= rows[:, j, :][:, finals[:, j]]
    em = model.emission(laws, y[:, block], comp=np.broadcast_to(block, (T, len(block))))
    hist = np.ones(len(paths))
    for t in range(1, T):
        hist *= em[t - 1][np.arange(len(block)), paths[:, t, block]].prod(axis=1)
    end = np.ones(len(finals))
    for j in range(len(block)):
        end *= em[T - 1][j, finals[:, j]]
    terms = (cond * hist)[:, None] * last * end[None, :]
    return _log(math.fsum(terms.ravel()))


def complement_paths(model, params, block, T):
    """Every complement path on [0:T-1] with its marginal probability.

    Returns trajectories of shape (M, T+1, N) (block columns and the final
    row are zero; filters never read them) and weights summing to one.
    """
    laws = _laws(model, params)
    block = np.asarray(block)
    rest = np.setdiff1d(np.arange(model.n_components), block)
    full = enumerate_paths(model, T)
    w = path_probs(model, laws, full)
    codes = np.zeros(len(full), dtype=np.int64)
    for t in range(T):
        for n in rest:
            codes = codes * model.n_states + full[:, t, n]
    uniq, inv = np.unique(codes, return_inverse=True)
    weights = np.array([math.fsum(w[inv == i]) for i in range(len(uniq))])
    first = np.array([np.flatnonzero(inv == i)[0] for i in range(len(uniq))])
    trajs = np.zeros((len(uniq), T + 1, model.n_components), dtype=np.int64)
    trajs[:, :T] = full[first]
    trajs[:, :T, block] = 0
    return trajs, weights


def _log(x):
    return math.log(x) if x > 0 else -math.inf


def exact_conditional_path_prob(model, params, path_block, paths_rest, block, tol=1e-10):
    """p(x^K_{[0:T]} | x^{\\K}_{[0:T]}) by the feedback-factor product, cross-checked.

    The product form multiplies block transitions by ratios
    p(x_t^{\\K} | x_{t-1}) / E[p(x_t^{\\K} | x_{t-1}^K, x_{t-1}^{\\K}) | x^{\\K}_{[0:t-1]}],
    with the expectation taken under a forward recursion over block
    configurations.  The ratio p(x) / p(x^{\\K}) over enumerated block paths
    must agree within ``tol``.
    """
    laws = _laws(model, params)
    block = np.atleast_1d(np.asarray(block))
    path_block = np.asarray(path_block).reshape(len(paths_rest), -1)
    rest = np.setdiff1d(np.arange(model.n_components), block)
    L = len(paths_rest)
    full = np.zeros((L, model.n_components), dtype=np.int64)
    full[:, block] = path_block
    full[:, rest] = np.asarray(paths_rest).reshape(L, -1)

    configs = mixed_radix(len(block), model.n_states)
    kidx = np.arange(len(block))

    def with_block(x, c):
        z = np.repeat(x[None], len(c), axis=0)
        z[:, block] = c
        return z

    prob = np.prod(laws["initial"][block, full[0, block]])
    belief = np.prod(laws["initial"][block[None, :], configs], axis=1)
    for t in range(1, L):
        cand = with_block(full[t - 1], configs)                            # (C, N)
        rows = model.transition_probs(laws, cand)                          # (C, N, X)
        rest_prob = np.prod(rows[:, rest, :][:, np.arange(len(rest)), full[t, rest]], axis=1)
        own = model.transition_probs(laws, full[t - 1][None])[0]
        prob *= np.prod(own[block, full[t, block]])
        denom = math.fsum(belief * rest_prob)
        if denom <= 0:
            raise UndefinedConditionalError("the complement path has probability zero")
        prob *= np.prod(own[rest, full[t, rest]]) / denom
        post = belief * rest_prob / denom
        nxt = np.ones((len(configs), len(configs)))
        for j in kidx:
            nxt *= rows[:, block[j], :][:, configs[:, j]]
        belief = _fsum(post[:, None] * nxt, axis=0)

    paths = _block_paths(model, full, block, L)
    joint = path_probs(model, laws, paths)
    denom = math.fsum(joint)
    if denom <= 0:
        raise UndefinedConditionalError("the complement path has probability zero")
    ratio = float(path_probs(model, laws, full[None])[0]) / denom
    if abs(prob - ratio) > tol:
        raise AssertionError(f"conditional path probability mismatch: {prob} vs {ratio}")
    return float(prob)
