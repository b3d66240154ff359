"""Guided particle filters used as baselines.

Both filters propose every component from its locally optimal proposal,
which is proportional to the transition row times the emission vector and
is available in closed form because the emission factorises.  The
incremental weight of a particle is the product of the per-component
normalisers.  Multinomial resampling happens at every step.

``apf_loglik`` weights and resamples whole particles.  ``block_apf_loglik``
weights and resamples each block of a partition on its own and glues the
resampled block columns back together, which removes the weight
degeneracy in high dimension at the price of a bias.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import dual as du
from .partition import Partition
from .rng import categorical, generator


@dataclass
class ParticleSystem:
    """Final particle cloud and per-step records.

    ``log_weights`` is (P,) for the joint filter and (P, |K|) for the block
    filter (last step, before resampling).  ``ess`` is (T,) or (T, |K|).
    """
    particles: np.ndarray
    log_weights: np.ndarray
    loglik_increments: np.ndarray
    ess: np.ndarray


@dataclass
class SMCDiagnostics:
    ess_min: float
    ess_mean: float
    failed: bool
    failed_blocks: list = field(default_factory=list)
    system: ParticleSystem | None = None


def _plain_laws(model, params):
    return {k: (du.value(v) if du.is_dual(v) else v) for k, v in model.laws(params).items()}


def _check(model, y, n_particles):
    if int(n_particles) < 2:
        raise ValueError("n_particles must be >= 2")
    return model.check_observations(y)


def _propose(model, laws, x, y_t, g):
    """Draw x_t from the optimal proposal; return (x_t, log normalisers (P, N))."""
    rows = model.transition_probs(laws, x)                 # (P, N, X)
    em = model.emission(laws, y_t)                          # (N, X)
    un = rows * em[None]
    z = un.sum(-1)
    u = g.random(x.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        nxt = categorical(un / np.where(z > 0, z, 1.0)[..., None], u)
        logz = np.log(z)
    return nxt.astype(x.dtype), logz


def _normalise(logw):
    """(log mean exp, normalised weights, ESS) for one weight group; None weights on collapse."""
    top = np.max(logw)
    if not np.isfinite(top):
        return -np.inf, None, 0.0
    w = np.exp(logw - top)
    s = w.sum()
    w = w / s
    return top + np.log(s / logw.size), w, 1.0 / np.sum(w * w)


@njit(cache=True)
def _merge_ancestors(w, u):
    """Inverse-CDF ancestors for each row of w (K, P) given sorted uniforms u (K, P)."""
    K, P = w.shape
    out = np.empty((P, K), dtype=np.int64)
    for k in range(K):
        c = w[k, 0]
        j = 0
        for i in range(P):
            while u[k, i] >= c and j < P - 1:
                j += 1
                c += w[k, j]
            out[i, k] = j
    return out


def _resample(w, u):
    """Multinomial ancestors; uniforms are sorted since order is irrelevant."""
    return _merge_ancestors(np.ascontiguousarray(w)[None], np.sort(u)[None])[:, 0]


def _resample_columns(w, u):
    """Independent multinomial ancestors per column of w (P, K) with uniforms u (K, P)."""
    return _merge_ancestors(np.ascontiguousarray(w.T), np.sort(u, axis=1))


def _initial(model, laws, n_particles, seed):
    g = generator(seed, "smc-propose", 0)
    u = g.random((n_particles, model.n_components))
    x = categorical(np.broadcast_to(laws["initial"], u.shape + (model.n_states,)), u)
    return x.astype(np.int64)


def apf_loglik(model, params, y, n_particles, seed=0):
    """Locally optimal guided particle filter estimate of log p(y_{1:T}).

    Returns ``(loglik, SMCDiagnostics)``; on total weight collapse the
    estimate is ``-inf`` and ``failed`` is set.
    """
    y = _check(model, y, n_particles)
    T = y.shape[0]
    laws = _plain_laws(model, params)
    x = _initial(model, laws, n_particles, seed)
    inc = np.zeros(T)
    ess = np.zeros(T)
    logw = np.zeros(n_particles)
    for t in range(T):
        x, logz = _propose(model, laws, x, y[t], generator(seed, "smc-propose", t + 1))
        logw = logz.sum(-1)
        inc[t], w, ess[t] = _normalise(logw)
        if w is None:
            inc[t + 1:] = np.nan
            sysm = ParticleSystem(x, logw, inc[: t + 1], ess[: t + 1])
            return -np.inf, SMCDiagnostics(0.0, float(ess[: t + 1].mean()), True, [0], sysm)
        anc = _resample(w, generator(seed, "smc-resample", t + 1).random(n_particles))
        x = x[anc]
    sysm = ParticleSystem(x, logw, inc, ess)
    return float(inc.sum()), SMCDiagnostics(float(ess.min()), float(ess.mean()), False, [], sysm)


def _normalise_columns(logw):
    """Column-wise version of :func:`_normalise` for (P, K) log-weights."""
    top = logw.max(axis=0)
    ok = np.isfinite(top)
    safe = np.where(ok, top, 0.0)
    w = np.exp(logw - safe)
    s = w.sum(axis=0)
    w = w / np.where(ok, s, 1.0)
    with np.errstate(divide="ignore"):
        inc = np.where(ok, safe + np.log(s / logw.shape[0]), -np.inf)
        ess = np.where(ok, 1.0 / np.sum(w * w, axis=0), 0.0)
    return inc, w, ess, ok


def block_apf_loglik(model, params, y, n_particles, partition=None, seed=0):
    """Block version: per-block weights, per-block resampling, recomposition.

    Returns ``(loglik, SMCDiagnostics)`` with the sum over blocks and time of
    the block log-normalisers; collapsed blocks contribute ``-inf`` and are
    listed in ``failed_blocks``.
    """
    y = _check(model, y, n_particles)
    T = y.shape[0]
    n = model.n_components
    partition = Partition.singletons(n) if partition is None else partition
    if partition.n_components != n:
        raise ValueError(f"partition covers {partition.n_components} components, model has {n}")
    K = len(partition)
    owner = np.empty(n, dtype=np.int64)
    for k, b in enumerate(partition.blocks):
        owner[np.asarray(b, dtype=np.int64)] = k
    blocks = [np.asarray(b, dtype=np.int64) for b in partition.blocks]
    singletons = partition.max_block == 1
    firsts = np.array([b[0] for b in blocks])
    laws = _plain_laws(model, params)
    x = _initial(model, laws, n_particles, seed)
    inc = np.zeros((T, K))
    ess = np.zeros((T, K))
    logw = np.zeros((n_particles, K))
    dead = np.zeros(K, dtype=bool)
    for t in range(T):
        x, logz = _propose(model, laws, x, y[t], generator(seed, "smc-propose", t + 1))
        if singletons:
            logw = logz[:, firsts]
        else:
            logw = np.stack([logz[:, b].sum(-1) for b in blocks], -1)
        u = generator(seed, "smc-resample", t + 1).random((K, n_particles))
        inc[t], w, ess[t], ok = _normalise_columns(logw)
        dead |= ~ok
        inc[t, dead] = -np.inf
        ess[t, dead] = 0.0
        anc = _resample_columns(w, u)
        x = np.take_along_axis(x, anc[:, owner], axis=0)
    total = -np.inf if dead.any() else float(inc.sum())
    live = ess[:, ~dead]
    sysm = ParticleSystem(x, logw, inc, ess)
    diag = SMCDiagnostics(float(live.min()) if live.size else 0.0,
                          float(live.mean()) if live.size else 0.0,
                          bool(dead.any()), [int(k) for k in np.flatnonzero(dead)], sysm)
    return total, diag
