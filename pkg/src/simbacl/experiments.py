"""Desk-scale study runners: KL trend, profile surfaces, SMC comparison,
estimator shrinkage.  Each returns plain arrays/dataclasses; the CLI and the
acceptance tests serialise or assert on them.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .divergence import kl_comparison
from .errors import ParameterError, SimbaError
from .filtering import simba_loglik
from .inference import AdamConfig, adam_fit
from .models import make_model
from .parameters import ThetaMap
from .partition import Partition
from .rng import derive_seed, generator
from .simulate import ensure_outbreak
from .smc import apf_loglik, block_apf_loglik


# KL trend -------------------------------------------------------------------------

@dataclass
class KLTrend:
    sizes: list
    kl: np.ndarray            # (len(sizes), seeds)
    mean: np.ndarray
    se: np.ndarray

    @property
    def nonincreasing(self):
        return bool(np.all(np.diff(self.mean) <= 0))


def kl_trend(sizes=(10, 50, 200), seeds=20, T=10, E=20, P=100, model_name="sis", seed=0,
             p_method=("feedback", None), q_method=("no_feedback", None)) -> KLTrend:
    """Mean per-block empirical KL(p || q) at baseline parameters for each size."""
    out = np.zeros((len(sizes), seeds))
    for i, n in enumerate(sizes):
        for s in range(seeds):
            model = make_model(model_name, n, seed=derive_seed(seed, n, s))
            res = kl_comparison(model, model.baseline(), T, E, P, derive_seed(seed, 1000 + n, s),
                                p_method, q_method)
            out[i, s] = res.kl
    mean = out.mean(axis=1)
    se = out.std(axis=1, ddof=1) / np.sqrt(seeds) if seeds > 1 else np.zeros(len(sizes))
    return KLTrend(list(sizes), out, mean, se)


# profile surfaces -------------------------------------------------------------------

@dataclass
class Surface:
    block: str
    grid_a: np.ndarray
    grid_b: np.ndarray
    values: np.ndarray        # (len(grid_a), len(grid_b)) composite log-likelihoods
    argmax: tuple
    argmax_value: tuple

    def rows(self):
        return [{"p1": float(a), "p2": float(b), "loglik": float(self.values[i, j])}
                for i, a in enumerate(self.grid_a) for j, b in enumerate(self.grid_b)]


def parse_grid(spec):
    """``"lo:hi:n"`` -> linspace, or a comma list of values."""
    spec = str(spec).strip()
    if ":" in spec:
        try:
            lo, hi, n = spec.split(":")
            return np.linspace(float(lo), float(hi), int(n))
        except ValueError:
            raise ParameterError(f"cannot parse grid {spec!r}; expected lo:hi:n") from None
    try:
        return np.array([float(v) for v in spec.split(",") if v.strip()])
    except ValueError:
        raise ParameterError(f"cannot parse grid {spec!r}") from None


def profile_surface(model, params, y, block, grid_a, grid_b, P=50, variant="no_feedback",
                    partition=None, seed=0) -> Surface:
    """Composite log-likelihood over a grid of a two-entry parameter block.

    Every node uses the same seed, so the complement simulations share their
    uniforms across the grid.
    """
    spec = {b.name: b for b in model.layout}
    if block not in spec:
        raise ParameterError(f"unknown parameter block {block!r}")
    if spec[block].size != 2:
        raise ParameterError(f"block {block!r} has {spec[block].size} entries; a surface needs 2")
    grid_a = np.asarray(grid_a, dtype=float)
    grid_b = np.asarray(grid_b, dtype=float)
    vals = np.empty((grid_a.size, grid_b.size))
    for i, a in enumerate(grid_a):
        for j, b in enumerate(grid_b):
            p = dict(params)
            p[block] = np.array([a, b])
            model.check_params(p)
            vals[i, j] = simba_loglik(model, p, y, P, variant, partition, seed).composite_loglik
    i, j = np.unravel_index(np.argmax(vals), vals.shape)
    return Surface(block, grid_a, grid_b, vals, (int(i), int(j)), (float(grid_a[i]), float(grid_b[j])))


def nearest_index(grid, value):
    return int(np.argmin(np.abs(np.asarray(grid) - value)))


def within_one_cell(surface: Surface, truth):
    ia = nearest_index(surface.grid_a, truth[0])
    ib = nearest_index(surface.grid_b, truth[1])
    return abs(surface.argmax[0] - ia) <= 1 and abs(surface.argmax[1] - ib) <= 1


@dataclass
class RecoveryReport:
    block: str
    hits: int
    seeds: int
    argmaxes: list = field(default_factory=list)


def surface_recovery(block, grid_a, grid_b, N=200, T=100, seeds=20, P=20, variant="no_feedback",
                     model_name="sis", seed=0, min_infected=10) -> RecoveryReport:
    """Simulate at baseline, scan the grid, count argmaxes within one cell of the truth."""
    hits, arg = 0, []
    for s in range(seeds):
        model = make_model(model_name, N, seed=derive_seed(seed, 1, s))
        params = model.baseline()
        _, obs = ensure_outbreak(model, params, T, derive_seed(seed, 2, s), min_infected)
        surf = profile_surface(model, params, obs.obs, block, grid_a, grid_b, P, variant, None,
                               derive_seed(seed, 3, s))
        hits += within_one_cell(surf, params[block])
        arg.append(surf.argmax_value)
    return RecoveryReport(block, hits, seeds, arg)


# SMC comparison ---------------------------------------------------------------------

COMPARISON_HEADER = ("method", "n_particles", "rep", "loglik", "wall_time_ms", "failed")
SMC_METHODS = ("apf", "block_apf", "simba_nf", "simba_f")


def smc_comparison(model, params, y, particle_counts=(100,), reps=10, methods=SMC_METHODS,
                   partition=None, seed=0):
    """One row per (method, particle count, replicate).

    For the composite-likelihood methods the particle count is the number of complement
    simulations.
    """
    rows = []
    part = partition if partition is not None else Partition.singletons(model.n_components)
    for m in methods:
        if m not in SMC_METHODS:
            raise ParameterError(f"unknown method {m!r}; expected one of {SMC_METHODS}")
    for m in methods:
        for n in particle_counts:
            for r in range(reps):
                s = derive_seed(seed, n, r)
                t0 = time.perf_counter()
                failed = False
                try:
                    if m == "apf":
                        ll, diag = apf_loglik(model, params, y, n, s)
                        failed = diag.failed
                    elif m == "block_apf":
                        ll, diag = block_apf_loglik(model, params, y, n, part, s)
                        failed = diag.failed
                    else:
                        variant = "no_feedback" if m == "simba_nf" else "feedback"
                        ll = simba_loglik(model, params, y, n, variant, part, s).composite_loglik
                        failed = not np.isfinite(ll)
                except SimbaError:
                    ll, failed = -np.inf, True
                ms = 1000.0 * (time.perf_counter() - t0)
                rows.append({"method": m, "n_particles": int(n), "rep": r, "loglik": float(ll),
                             "wall_time_ms": ms, "failed": bool(failed)})
    return rows


SUMMARY_HEADER = ("method", "n_particles", "mean", "sd", "mean_time_ms", "failed")


def summarize_comparison(rows):
    """Method x particle-count table of means, sds and times."""
    keys = []
    for r in rows:
        k = (r["method"], r["n_particles"])
        if k not in keys:
            keys.append(k)
    out = []
    for m, n in keys:
        sel = [r for r in rows if r["method"] == m and r["n_particles"] == n]
        ll = np.array([r["loglik"] for r in sel if not r["failed"]])
        out.append({"method": m, "n_particles": n,
                    "mean": float(ll.mean()) if ll.size else float("-inf"),
                    "sd": float(ll.std(ddof=1)) if ll.size > 1 else float("nan"),
                    "mean_time_ms": float(np.mean([r["wall_time_ms"] for r in sel])),
                    "failed": int(sum(r["failed"] for r in sel))})
    return out


# shrinkage ----------------------------------------------------------------------------

@dataclass
class ShrinkageReport:
    sizes: list                # (N, T) pairs
    estimates: list            # per size: (fits, d) natural-scale estimates
    sd: np.ndarray             # (len(sizes), d)


def shrinkage(sizes=((100, 100), (500, 200)), fits=20, block="beta_lambda", P=10, config=None,
              model_name="sis", seed=0, init_scale=0.5, variant="no_feedback") -> ShrinkageReport:
    """Spread of the fitted block over independent datasets, for each (N, T)."""
    config = config or AdamConfig()
    ests, sds = [], []
    for (n, T) in sizes:
        model = make_model(model_name, n, seed=derive_seed(seed, n, T))
        tm = ThetaMap(model.layout, model.baseline(), {block: True})
        truth = tm.pack()
        e = []
        for f in range(fits):
            _, obs = ensure_outbreak(model, tm.base, T, derive_seed(seed, 1, n, T, f))
            start = truth + init_scale * generator(derive_seed(seed, n, T), "fit", f).standard_normal(truth.size)
            res = adam_fit(model, tm, start, obs.obs, P, variant, None, config, derive_seed(seed, 2, n, T, f))
            e.append(res.natural[block])
        e = np.array(e)
        ests.append(e)
        sds.append(e.std(axis=0, ddof=1))
    return ShrinkageReport([tuple(s) for s in sizes], ests, np.array(sds))


# sign symmetry ------------------------------------------------------------------------

@dataclass
class SymmetryReport:
    """Surface minus its mirror image in the second coordinate, over seeds."""
    grid_a: np.ndarray
    grid_b: np.ndarray
    asymmetry: np.ndarray     # (seeds, len(grid_a), len(grid_b))
    mean: np.ndarray
    se: np.ndarray

    @property
    def max_z(self):
        half = self.grid_b.size // 2
        m, s = self.mean[:, :half], self.se[:, :half]
        return float(np.max(np.abs(m) / np.where(s > 0, s, np.inf)))

    def symmetric(self, z=3.0):
        return self.max_z <= z


def sign_symmetry(block="beta0", grid_a=np.linspace(-7, -2, 6), grid_b=np.linspace(-1.5, 1.5, 7),
                  N=200, T=100, seeds=20, P=50, variant="no_feedback", model_name="sis", seed=0,
                  min_infected=10) -> SymmetryReport:
    """Across datasets, compare the surface at (a, b) with (a, -b).

    ``grid_b`` must be symmetric about zero.  A single dataset can favour
    either sign; the average over datasets should not.
    """
    grid_b = np.asarray(grid_b, dtype=float)
    if not np.allclose(grid_b, -grid_b[::-1]):
        raise ParameterError("second grid must be symmetric about zero")
    asym = []
    for s in range(seeds):
        model = make_model(model_name, N, seed=derive_seed(seed, 1, s))
        params = model.baseline()
        _, obs = ensure_outbreak(model, params, T, derive_seed(seed, 2, s), min_infected)
        surf = profile_surface(model, params, obs.obs, block, grid_a, grid_b, P, variant, None,
                               derive_seed(seed, 3, s))
        asym.append(surf.values - surf.values[:, ::-1])
    asym = np.array(asym)
    se = asym.std(axis=0, ddof=1) / np.sqrt(seeds) if seeds > 1 else np.zeros(asym.shape[1:])
    return SymmetryReport(np.asarray(grid_a, float), grid_b, asym, asym.mean(axis=0), se)
