"""Block filters conditional on simulated complement trajectories.

For a block K and one simulated trajectory of the whole system, the
components outside K are frozen at their simulated values and a forward
filter runs on the joint space X^|K| of the block.  Two variants:

``no_feedback``
    The complement only enters through the kernel rows of the block.

``feedback``
    Additionally reweights the block's past by how likely the complement's
    next simulated move is under each block configuration, using a second
    filter that tracks the block given the complement alone.  Averaging its
    output over complement paths gives the exact block marginal.

Everything is vectorised over (simulation, block, configuration) and works
with either plain arrays or :class:`~simbacl.dual.Dual` parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dual as du
from . import singleton_sis
from .errors import DataError, UndefinedConditionalError
from .oracle import mixed_radix
from .partition import Partition
from .simulate import sample_trajectories

VARIANTS = ("feedback", "no_feedback")
_CHUNK_BUDGET = 3_000_000


def check_variant(variant):
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    return variant


class _Group:
    def __init__(self, model, members):
        self.members = np.asarray(members, dtype=np.int64)
        self.nb, self.k = self.members.shape
        self.cfg = mixed_radix(self.k, model.n_states)
        self.C = len(self.cfg)
        self.infc = model.infectivity[self.cfg]                  # (C, k)
        self.v = self.infc.sum(1)                                # (C,)
        n = model.n_components
        inblock = np.zeros((self.nb, n), dtype=bool)
        inblock[np.arange(self.nb)[:, None], self.members] = True
        self.inblock = inblock
        integer = np.all(np.isin(model.infectivity, (0.0, 1.0)))
        self.homogeneous = model.homogeneous_weight is not None and integer

    def initial(self, laws):
        init = laws["initial"]
        out = init[self.members[:, 0]][:, self.cfg[:, 0]]
        for i in range(1, self.k):
            out = out * init[self.members[:, i]][:, self.cfg[:, i]]
        return out                                              # (nb, C)

    def emission(self, model, laws, y):
        comp = np.broadcast_to(self.members, (y.shape[0],) + self.members.shape)
        em = model.emission(laws, y[:, self.members], comp=comp)  # (T, nb, k, X)
        out = em[:, :, 0, :][:, :, self.cfg[:, 0]]
        for i in range(1, self.k):
            out = out * em[:, :, i, :][:, :, self.cfg[:, i]]
        return out                                              # (T, nb, C)

    def member_pressure(self, model, laws, dprev, total):
        if self.homogeneous:
            cnt = dprev.sum(1)
            dk = dprev[:, self.members].sum(-1)
            pr = model.homogeneous_weight * (cnt[:, None, None] - dk[:, :, None] + self.v[None, None, :])
            return pr[..., None]                                # (P, nb, C, 1)
        w = laws["weights"]
        wsub = w[self.members[:, :, None], self.members[:, None, :]]          # (nb, k, k)
        delta = self.infc[None, None] - dprev[:, self.members][:, :, None, :]  # (P, nb, C, k)
        return du.einsum("bij,pbcj->pbci", wsub, delta) + total[:, self.members][:, :, None, :]

    def transition(self, model, laws, prev, dprev, total):
        """Block transition matrices (P, nb, C, C) given the complement at t-1."""
        pr = self.member_pressure(model, laws, dprev, total)
        comp = self.members[None, :, None, :]
        rows = model.transition_rows(laws, pr, comp, self.cfg[None, None])   # (P, nb, C, k, X)
        out = rows[:, :, :, 0, :][:, :, :, self.cfg[:, 0]]
        for i in range(1, self.k):
            out = out * rows[:, :, :, i, :][:, :, :, self.cfg[:, i]]
        return out

    def feedback_loglik(self, model, laws, prev, nxt, dprev, total):
        """L[p, b, c] = Σ_{n∉K} log p(x_t^n | x_{t-1}^K = c, x_{t-1}^{∖K})."""
        if self.homogeneous:
            return self._feedback_homogeneous(model, laws, prev, nxt, dprev)
        return self._feedback_dense(model, laws, prev, nxt, dprev, total)

    def _observed_logprob(self, model, laws, pr, comp, prev, nxt):
        ell = model.log_transition_prob(laws, pr, comp, prev, nxt)
        bad = ~np.isfinite(du.value(ell))
        return du.where(bad, 0.0, ell), bad

    def _feedback_homogeneous(self, model, laws, prev, nxt, dprev):
        P, n = prev.shape
        k = self.k
        shifts = np.arange(-k, k + 1)
        cnt = dprev.sum(1)
        prs = model.homogeneous_weight * np.maximum(cnt[:, None] + shifts[None], 0.0)   # (P, S)
        comp = np.arange(n)[None, :, None]
        fin, bad = self._observed_logprob(model, laws, prs[:, None, :], comp,
                                          prev[:, :, None], nxt[:, :, None])            # (P, N, S)
        gfin = du.total(fin, axis=1)
        gbad = bad.sum(1)
        dk = dprev[:, self.members].sum(-1)                                             # (P, nb)
        sidx = (self.v[None, None, :] - dk[:, :, None] + k).astype(np.int64)           # (P, nb, C)
        pidx = np.arange(P)[:, None, None]
        lf = gfin[pidx, sidx]
        lb = gbad[pidx, sidx]
        midx = self.members[None, :, None, :]
        mf = fin[pidx[..., None], midx, sidx[..., None]]
        mb = bad[pidx[..., None], midx, sidx[..., None]]
        lf = lf - du.total(mf, axis=-1)
        lb = lb - mb.sum(-1)
        return du.where(lb > 0, -np.inf, lf)

    def _feedback_dense(self, model, laws, prev, nxt, dprev, total):
        w = laws["weights"]
        delta = self.infc[None, None] - dprev[:, self.members][:, :, None, :]          # (P, nb, C, k)
        wcol = w[:, self.members]                                                       # (N, nb, k)
        pr = du.einsum("nbj,pbcj->pbcn", wcol, delta) + total[:, None, None, :]
        n = model.n_components
        comp = np.arange(n)[None, None, None, :]
        fin, bad = self._observed_logprob(model, laws, pr, comp,
                                          prev[:, None, None, :], nxt[:, None, None, :])  # (P, nb, C, N)
        keep = ~self.inblock[None, :, None, :]
        lf = du.total(fin * keep, axis=-1)
        lb = (bad & keep).sum(-1)
        return du.where(lb > 0, -np.inf, lf)

    def interaction_variance(self, model, belief_sim, constants):
        """(1/N) Σ_{n∉K} s_max_n Var[d_{K,n}(x^K)] under ``belief_sim``; shape (P, nb)."""
        bs = du.value(belief_sim)
        smax = constants.s_max
        n = model.n_components
        if constants.interaction is None:
            m1 = (bs * self.v).sum(-1)
            m2 = (bs * self.v ** 2).sum(-1)
            var = np.maximum(m2 - m1 ** 2, 0.0)
            weight = smax.sum() - smax[self.members].sum(-1)                # (nb,)
            return var * weight[None] / n
        inter = constants.interaction                                      # (N, N): [nbar, n]
        dmat = np.einsum("nbj,cj->bnc", inter[:, self.members], self.infc)  # (nb, N, C)
        m1 = np.einsum("pbc,bnc->pbn", bs, dmat)
        m2 = np.einsum("pbc,bnc->pbn", bs, dmat ** 2)
        var = np.maximum(m2 - m1 ** 2, 0.0) * (~self.inblock)[None]
        return (var * smax[None, None, :]).sum(-1) / n


def _normalise(u):
    z = du.total(u, axis=-1)
    zv = du.value(z)
    dead = zv <= 0
    safe = du.where(dead, 1.0, z)
    b = u / safe[..., None]
    if np.any(dead):
        c = du.value(u).shape[-1]
        b = du.where(dead[..., None], 1.0 / c, b)
    return b, du.log(z), dead


def run_group(model, laws, y, trajs, members, variant, include_feedback_terms=True,
              constants=None, check=False):
    """Log-likelihoods of shape (P, nb) for one group of equal-sized blocks.

    With ``y=None`` only the complement-driven filter runs; ``constants``
    requests the per-step interaction variances used by the KL bound.
    """
    g = _Group(model, members)
    trajs = np.asarray(trajs)
    P = trajs.shape[0]
    T = y.shape[0] if y is not None else trajs.shape[1] - 1
    feedback = variant == "feedback" or constants is not None
    init = g.initial(laws)
    ones = np.ones((P, 1, 1))
    belief = init[None] * ones if du.is_dual(init) else np.broadcast_to(init[None], (P, g.nb, g.C))
    belief_sim = belief if feedback else None
    em = g.emission(model, laws, y) if y is not None else None
    ll = 0.0
    bound = [] if constants is not None else None
    weighted = model.homogeneous_weight is None
    for t in range(1, T + 1):
        prev = trajs[:, t - 1].astype(np.int64)
        dprev = model.infectivity[prev]
        total = du.einsum("nm,pm->pn", laws["weights"], dprev) if weighted else None
        trans = g.transition(model, laws, prev, dprev, total)
        if bound is not None:
            bound.append(g.interaction_variance(model, belief_sim, constants))
        last = t == T
        if feedback and not last:
            nxt = trajs[:, t].astype(np.int64)
            L = g.feedback_loglik(model, laws, prev, nxt, dprev, total)
            Lv = du.value(L)
            shift = np.max(Lv, axis=-1, keepdims=True)
            if np.any(~np.isfinite(shift)):
                raise UndefinedConditionalError("the complement move has probability zero for every block configuration")
            e = du.exp(L - shift)
            den = du.total(belief_sim * e, axis=-1)
            if np.any(du.value(den) <= 0):
                raise UndefinedConditionalError("feedback denominator is zero")
            if variant == "feedback" and y is not None:
                belief, lognum, _ = _normalise(belief * e)
                inc = lognum - du.log(den)
                if not include_feedback_terms:
                    inc = du.value(inc)
                ll = ll + inc
            post = belief_sim * e / den[..., None]
            belief_sim = du.vecmat(post, trans)
        if y is not None:
            pred = du.vecmat(belief, trans)
            belief, logz, _ = _normalise(pred * em[t - 1][None])
            ll = ll + logz
            if check:
                s = du.value(belief).sum(-1)
                assert np.all(np.abs(s - 1.0) < 1e-9), "belief lost normalisation"
    if bound is not None:
        return ll, np.stack(bound, axis=-1)
    return ll


def _chunks(P, model, members, nvars):
    nb, k = np.asarray(members).shape
    c = model.n_states ** k
    per_sim = nb * c * max(c, k * model.n_states ** 2) * (1 + nvars)
    if model.homogeneous_weight is None:
        per_sim = max(per_sim, nb * c * model.n_components * model.n_states ** 2 * (1 + nvars))
    step = max(1, _CHUNK_BUDGET // max(per_sim, 1))
    return [(lo, min(P, lo + step)) for lo in range(0, P, step)]


def _nvars(laws):
    for v in laws.values():
        if du.is_dual(v):
            return v.nvars * (1 + (v.order > 1) * v.nvars)
    return 0


def block_logliks(model, laws, y, trajs, partition, variant, include_feedback_terms=True,
                  compiled=True):
    """Per-(simulation, block) conditional log-likelihoods, shape (P, |K|).

    ``compiled`` routes singleton partitions of homogeneous SIS models to the
    numba kernel; the generic vectorised filter handles everything else.
    """
    if compiled and singleton_sis.applies(model, partition, laws):
        out = singleton_sis.singleton_logliks(model, laws, y, trajs, variant, include_feedback_terms)
        order = np.array([b[0] for b in partition.blocks])
        return out[:, order]
    P = len(trajs)
    cols = [None] * len(partition)
    nv = _nvars(laws)
    for _, (ids, members) in partition.groups().items():
        parts = []
        for lo, hi in _chunks(P, model, members, nv):
            parts.append(run_group(model, laws, y, trajs[lo:hi], members, variant, include_feedback_terms))
        res = du.concatenate(parts, axis=0) if len(parts) > 1 else parts[0]
        for j, bid in enumerate(ids):
            cols[bid] = res[:, j]
    return du.stack(cols, axis=1)


# single-trajectory entry points ----------------------------------------------

def _single(model, params, y, traj, block, variant):
    y = model.check_observations(y)
    states = model.check_states(traj.states if hasattr(traj, "states") else traj)
    if states.shape[0] < y.shape[0]:
        raise DataError("trajectory shorter than the observation horizon")
    laws = model.laws(params)
    members = np.asarray(block, dtype=np.int64).reshape(1, -1)
    out = run_group(model, laws, y, states[None], members, variant, check=True)
    return float(du.value(out)[0, 0]) if not du.is_dual(out) else out[0, 0]


def filter_without_feedback(model, params, y, traj, block):
    """log p~(y^K | x^{∖K}) with the complement plugged into the kernel."""
    return _single(model, params, y, traj, block, "no_feedback")


def filter_with_feedback(model, params, y, traj, block):
    """log p(y^K | x^{∖K}_{[0:T-1]}) including the simulation feedback."""
    return _single(model, params, y, traj, block, "feedback")


# Monte Carlo aggregation -----------------------------------------------------

@dataclass
class MarginalEstimate:
    """Per-block Monte Carlo likelihoods and their aggregation.

    ``per_block`` has shape (P, |K|) in log space.  ``dual`` holds the
    differentiable composite when the parameters carried derivatives.
    """
    per_block: np.ndarray
    log_marginal: np.ndarray
    composite_loglik: float
    seed: int | None
    P: int
    variant: str
    zero_blocks: list = field(default_factory=list)
    dual: object = None
    dual_blocks: object = None

    def loo_standard_error(self):
        """Leave-one-out (jackknife) standard error of the composite over simulations."""
        P = self.per_block.shape[0]
        if P < 2:
            return float("nan")
        pb = self.per_block
        m = np.max(pb, axis=0, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        e = np.exp(pb - m)
        tot = e.sum(0, keepdims=True)
        with np.errstate(divide="ignore"):
            loo = np.log((tot - e) / (P - 1)) + m
        comp = loo.sum(1)
        if not np.all(np.isfinite(comp)):
            return float("nan")
        return float(np.sqrt((P - 1) / P * ((comp - comp.mean()) ** 2).sum()))


def log_mean_exp(x, axis=0):
    P = du.value(x).shape[axis]
    return du.logsumexp(x, axis=axis) - np.log(P)


def simulate_complements(model, params, T, P, seed):
    vals = {k: du.value(v) if du.is_dual(v) else v for k, v in params.items()}
    return sample_trajectories(model, vals, T, seed, np.arange(P), stream="simba")


def simba_loglik(model, params, y, P, variant, partition, seed, trajectories=None,
                 include_feedback_terms=True, compiled=True):
    """Monte Carlo composite log-likelihood.

    ``P`` trajectories are simulated at the parameter values (derivatives
    are never propagated through the sampler) and shared by every block.
    Each block's likelihood is the log of the mean over simulations.
    """
    check_variant(variant)
    y = model.check_observations(y)
    if partition is None:
        partition = Partition.singletons(model.n_components)
    partition.check_capacity(model.n_states)
    if trajectories is None:
        if P < 1:
            raise ValueError("P must be >= 1")
        trajectories = simulate_complements(model, params, y.shape[0], P, seed)
    trajectories = np.asarray(trajectories)
    laws = model.laws(params)
    lls = block_logliks(model, laws, y, trajectories, partition, variant, include_feedback_terms,
                        compiled)
    lm = log_mean_exp(lls, axis=0)
    per = np.asarray(du.value(lls))
    lmv = np.asarray(du.value(lm))
    zero = [int(i) for i in np.flatnonzero(~np.isfinite(lmv))]
    comp = float(lmv.sum()) if not zero else -np.inf
    est = MarginalEstimate(per, lmv, comp, seed, len(trajectories), variant, zero)
    if du.is_dual(lm):
        est.dual_blocks = lm
        est.dual = lm.sum()
    return est


def composite_loglik(model, params, y, P, variant, partition, seed, **kw):
    return simba_loglik(model, params, y, P, variant, partition, seed, **kw).composite_loglik
