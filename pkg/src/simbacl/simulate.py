"""Forward simulation of latent trajectories and detections."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dual as du
from . import rng
from .errors import OutbreakError

_CHUNK_CELLS = 4_000_000


@dataclass
class Trajectory:
    """Latent states, row 0 is x_0; shape (T+1, N)."""
    states: np.ndarray
    seed: int | None = None

    @property
    def horizon(self):
        return self.states.shape[0] - 1


@dataclass
class ObservationSet:
    """Detections, row t-1 is y_t; shape (T, N); -1 marks missing."""
    obs: np.ndarray
    seed: int | None = None
    attempts: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self):
        return self.obs.shape[0]


def sample_trajectories(model, params, T, seed, sims, stream="latent", laws=None):
    """Trajectories for every simulation index in ``sims``: shape (P, T+1, N).

    Simulation ``i`` only consumes the uniforms keyed by ``(seed, stream, i)``.
    """
    if T < 1:
        raise ValueError("horizon T must be >= 1")
    laws = model.laws(params) if laws is None else _values(laws)
    laws = _values(laws)
    sims = np.atleast_1d(np.asarray(sims, dtype=np.int64))
    n = model.n_components
    out = np.empty((len(sims), T + 1, n), dtype=np.int8 if model.n_states < 128 else np.int64)
    chunk = max(1, _CHUNK_CELLS // ((T + 1) * n))
    init = laws["initial"]
    for lo in range(0, len(sims), chunk):
        sub = sims[lo:lo + chunk]
        u = rng.uniforms(seed, stream, sub, (T + 1, n))
        x = rng.categorical(init[None], u[:, 0])
        out[lo:lo + chunk, 0] = x
        for t in range(1, T + 1):
            probs = model.transition_probs(laws, x)
            x = rng.categorical(probs, u[:, t])
            out[lo:lo + chunk, t] = x
    return out


def _values(laws):
    return {k: (du.value(v) if du.is_dual(v) else v) for k, v in laws.items()}


def sample_trajectory(model, params, T, seed, sim=0, stream="latent"):
    states = sample_trajectories(model, params, T, seed, [sim], stream)[0]
    return Trajectory(states.astype(np.int64), seed)


def sample_observations(model, params, traj, seed, sim=0, stream="obs"):
    states = traj.states if isinstance(traj, Trajectory) else np.asarray(traj)
    states = model.check_states(states)
    laws = _values(model.laws(params))
    det = laws["detection"]
    x = states[1:]
    prob = np.take_along_axis(det[None], x[..., None].astype(np.int64), -1)[..., 0]
    u = rng.uniforms(seed, stream, [sim], x.shape)[0]
    return ObservationSet((u < prob).astype(np.int64), seed)


def ever_infected(states):
    """Number of components that ever leave the first (susceptible) state."""
    return int(np.any(np.asarray(states) != 0, axis=0).sum())


def ensure_outbreak(model, params, T, seed, min_infected=0, max_attempts=1000):
    """Resample (trajectory, observations) until enough components get infected."""
    if min_infected < 0:
        raise ValueError("min_infected must be >= 0")
    for attempt in range(max_attempts):
        traj = sample_trajectory(model, params, T, seed, sim=attempt, stream="data")
        if ever_infected(traj.states) >= min_infected:
            obs = sample_observations(model, params, traj, seed, sim=attempt)
            obs.attempts = attempt + 1
            return traj, obs
    raise OutbreakError(f"no outbreak with >= {min_infected} infected after {max_attempts} attempts")
