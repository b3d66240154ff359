"""Keyed random streams.

Every draw is addressed by ``(seed, stream, sim)`` plus its position
``(t, n)`` inside a per-simulation array.  Each ``(seed, stream, sim)``
triple seeds an independent Philox counter generator, so a simulation's
uniforms never depend on how many other simulations were drawn or in which
order (which is what lets ensembles be split across workers).
"""
import numpy as np

STREAMS = {
    "latent": 1,
    "obs": 2,
    "simba": 3,
    "data": 4,
    "covariates": 5,
    "smc-propose": 6,
    "smc-resample": 7,
    "fit": 8,
    "godambe": 9,
    "restart": 10,
    "coverage": 11,
    "kl": 12,
}


def _stream_id(stream):
    if isinstance(stream, str):
        return STREAMS[stream]
    return int(stream)


def generator(seed, stream, sim=0):
    """A numpy Generator for one ``(seed, stream, sim)`` key."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _stream_id(stream), int(sim)])
    return np.random.Generator(np.random.Philox(ss))


def uniforms(seed, stream, sims, shape):
    """Uniforms of shape ``(len(sims),) + shape``; row i depends only on sims[i]."""
    sims = np.atleast_1d(np.asarray(sims, dtype=np.int64))
    shape = tuple(shape)
    out = np.empty((len(sims),) + shape)
    for i, s in enumerate(sims):
        out[i] = generator(seed, stream, s).random(shape)
    return out


def derive_seed(seed, *keys):
    """Deterministic child seed from a parent seed and integer keys."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def categorical(probs, u):
    """Inverse-CDF draw along the last axis of ``probs`` using uniforms ``u``.

    Probabilities need not be normalised exactly; the draw is clipped to the
    last state with positive mass.
    """
    if probs.shape[-1] == 2:                       # same draw as the general branch
        p0 = probs[..., 0]
        return (u * (p0 + probs[..., 1]) >= p0).astype(np.int64)
    cdf = np.cumsum(probs, axis=-1)
    total = cdf[..., -1:]
    idx = (u[..., None] * total >= cdf).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)
