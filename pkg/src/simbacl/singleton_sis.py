"""Compiled singleton-block filters for homogeneous two-state SIS models.

The generic filter in :mod:`simbacl.filtering` handles any block size and
any model but pays numpy dispatch costs on every small array operation.
For the workhorse configuration (SIS, fully factorised partition, pressure
given by the infected fraction) the recursion is only a handful of scalar
updates per (simulation, component, step), so it is compiled with numba.

Derivatives are carried as flat jets ``[value, gradient (d), Hessian
(d*d)]`` propagated by hand through every operation.  Both filter variants
are supported and the outputs match the generic path to rounding error.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from . import dual as du
from .errors import UndefinedConditionalError


# jet arithmetic --------------------------------------------------------------
# A jet over ``d`` variables is a row [value, gradient (d), Hessian (d*d)] of
# a 2-d float array.  Every helper addresses jets by (array, row) so the
# compiled loops never build array views; entries beyond ``order`` are left
# untouched.

@njit(cache=True, error_model="numpy")
def _const(O, o, v, m):
    for i in range(m):
        O[o, i] = 0.0
    O[o, 0] = v


@njit(cache=True, error_model="numpy")
def _copy(O, o, A, a, m):
    for i in range(m):
        O[o, i] = A[a, i]


@njit(cache=True, error_model="numpy")
def _lin(O, o, A, a, ca, B, b, cb, m):
    for i in range(m):
        O[o, i] = ca * A[a, i] + cb * B[b, i]


@njit(cache=True, error_model="numpy")
def _mul(O, o, A, a, B, b, d, order):
    a0 = A[a, 0]
    b0 = B[b, 0]
    if order >= 2:
        base = 1 + d
        for i in range(d):
            ai = A[a, 1 + i]
            bi = B[b, 1 + i]
            for j in range(d):
                k = base + i * d + j
                O[o, k] = A[a, k] * b0 + a0 * B[b, k] + ai * B[b, 1 + j] + A[a, 1 + j] * bi
    if order >= 1:
        for i in range(d):
            O[o, 1 + i] = A[a, 1 + i] * b0 + a0 * B[b, 1 + i]
    O[o, 0] = a0 * b0


@njit(cache=True, error_model="numpy")
def _unary(O, o, A, a, f0, f1, f2, d, order):
    """O[o] = f(A[a]) given f, f', f'' at the value."""
    if order >= 2:
        base = 1 + d
        for i in range(d):
            for j in range(d):
                k = base + i * d + j
                O[o, k] = f1 * A[a, k] + f2 * A[a, 1 + i] * A[a, 1 + j]
    if order >= 1:
        for i in range(d):
            O[o, 1 + i] = f1 * A[a, 1 + i]
    O[o, 0] = f0


@njit(cache=True, error_model="numpy")
def _exp(O, o, A, a, shift, d, order):
    """exp(A[a] - shift) with a constant shift."""
    v = math.exp(A[a, 0] - shift)
    _unary(O, o, A, a, v, v, v, d, order)


@njit(cache=True, error_model="numpy")
def _log(O, o, A, a, d, order):
    v = A[a, 0]
    if v > 0.0:
        _unary(O, o, A, a, math.log(v), 1.0 / v, -1.0 / (v * v), d, order)
    else:
        _unary(O, o, A, a, -np.inf, 0.0, 0.0, d, order)


@njit(cache=True, error_model="numpy")
def _log1mexpneg(O, o, A, a, d, order):
    """log(1 - exp(-A[a])) for a positive rate."""
    r = A[a, 0]
    q = -math.expm1(-r)
    if q <= 0.0:
        _unary(O, o, A, a, -np.inf, 0.0, 0.0, d, order)
        return
    g = math.exp(-r) / q
    _unary(O, o, A, a, math.log(q), g, -g - g * g, d, order)


@njit(cache=True, error_model="numpy")
def _recip(O, o, A, a, d, order):
    v = A[a, 0]
    _unary(O, o, A, a, 1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v), d, order)


# kernel ----------------------------------------------------------------------

# register rows
(ONE, IOTA, BS, SIM, LL, RATE, STAY, PS, PI, US, UI, Z, T1, T2, T3, L0, L1, F0, F1, DEN,
 EMS, EMI, NREG) = range(23)


def _build(d, order):
    """Compile the filter for a fixed jet size so the jet loops unroll."""
    m = 1 + d + d * d

    @njit(error_model="numpy")
    def kernel(own, y, w, lam, iota, rec, lrec, neggam, bs0, det, feedback, with_fb_terms):
        P, T1_, N = own.shape
        T = T1_ - 1
        out = np.zeros((P, N, m))
        R = np.zeros((NREG, m))
        _const(R, ONE, 1.0, m)
        _copy(R, IOTA, iota, 0, m)
        cnt = np.zeros(T1_)
        nt = max(T - 1, 1) if feedback else 1
        ell = np.zeros((nt * 3 * N if feedback else 1, m))       # row (t*3 + k)*N + n
        gsum = np.zeros((nt * 3, m))
        gbad = np.zeros(nt * 3, dtype=np.int64)

        for p in range(P):
            for t in range(T1_):
                c = 0
                for n in range(N):
                    c += own[p, t, n]
                cnt[t] = c
            if feedback:
                for t in range(T - 1):
                    for k in range(3):
                        g = t * 3 + k
                        _const(gsum, g, 0.0, m)
                        gbad[g] = 0
                        pr = w * max(cnt[t] + k - 1, 0.0)
                        for n in range(N):
                            r = g * N + n
                            prev = own[p, t, n]
                            nxt = own[p, t + 1, n]
                            if prev == 0:
                                _copy(R, T1, R, IOTA, m)
                                R[T1, 0] += pr
                                _mul(R, T2, lam, n, R, T1, d, order)
                                if nxt == 0:
                                    _lin(ell, r, R, T2, -1.0, R, T2, 0.0, m)
                                else:
                                    _log1mexpneg(ell, r, R, T2, d, order)
                            elif nxt == 0:
                                _copy(ell, r, lrec, n, m)
                            else:
                                _copy(ell, r, neggam, n, m)
                            if ell[r, 0] == -np.inf:
                                gbad[g] += 1
                            else:
                                _lin(gsum, g, gsum, g, 1.0, ell, r, 1.0, m)

            for n in range(N):
                _copy(R, BS, bs0, n, m)
                _copy(R, SIM, bs0, n, m)
                _const(R, LL, 0.0, m)
                dead = False
                for t in range(1, T + 1):
                    x0 = own[p, t - 1, n]
                    # S row of the member's kernel given the complement
                    _copy(R, T1, R, IOTA, m)
                    R[T1, 0] += w * (cnt[t - 1] - x0)
                    _mul(R, RATE, lam, n, R, T1, d, order)
                    v = math.exp(-R[RATE, 0])
                    _unary(R, STAY, R, RATE, v, -v, v, d, order)

                    if feedback and t < T:
                        # L_c = sum over other components of log p(next | member state c)
                        gS = (t - 1) * 3 + (1 - x0)
                        gI = (t - 1) * 3 + (2 - x0)
                        rS = gS * N + n
                        rI = gI * N + n
                        ownS = ell[rS, 0] == -np.inf
                        ownI = ell[rI, 0] == -np.inf
                        badS = gbad[gS] - (1 if ownS else 0)
                        badI = gbad[gI] - (1 if ownI else 0)
                        if ownS:
                            _copy(R, L0, gsum, gS, m)
                        else:
                            _lin(R, L0, gsum, gS, 1.0, ell, rS, -1.0, m)
                        if ownI:
                            _copy(R, L1, gsum, gI, m)
                        else:
                            _lin(R, L1, gsum, gI, 1.0, ell, rI, -1.0, m)
                        if badS > 0 and badI > 0:
                            return out, 1
                        if badS > 0:
                            _exp(R, F1, R, L1, R[L1, 0], d, order)
                            _const(R, F0, 0.0, m)
                        elif badI > 0:
                            _exp(R, F0, R, L0, R[L0, 0], d, order)
                            _const(R, F1, 0.0, m)
                        else:
                            shift = max(R[L0, 0], R[L1, 0])
                            _exp(R, F0, R, L0, shift, d, order)
                            _exp(R, F1, R, L1, shift, d, order)
                        # den = sim f0 + (1 - sim) f1
                        _lin(R, T1, R, ONE, 1.0, R, SIM, -1.0, m)
                        _mul(R, T2, R, SIM, R, F0, d, order)
                        _mul(R, T3, R, T1, R, F1, d, order)
                        _lin(R, DEN, R, T2, 1.0, R, T3, 1.0, m)
                        if R[DEN, 0] <= 0.0:
                            return out, 2
                        # reweight the data filter
                        _mul(R, US, R, BS, R, F0, d, order)
                        _lin(R, T1, R, ONE, 1.0, R, BS, -1.0, m)
                        _mul(R, UI, R, T1, R, F1, d, order)
                        _lin(R, Z, R, US, 1.0, R, UI, 1.0, m)
                        if R[Z, 0] <= 0.0:
                            dead = True
                            _const(R, BS, 0.5, m)
                        else:
                            _recip(R, T1, R, Z, d, order)
                            _mul(R, BS, R, US, R, T1, d, order)
                            if not dead:
                                _log(R, T1, R, Z, d, order)
                                _log(R, T3, R, DEN, d, order)
                                if with_fb_terms == 1:
                                    _lin(R, T2, R, T1, 1.0, R, T3, -1.0, m)
                                    _lin(R, LL, R, LL, 1.0, R, T2, 1.0, m)
                                else:
                                    R[LL, 0] += R[T1, 0] - R[T3, 0]
                        # for-feedback filter: post = sim f0 / den, then predict
                        _recip(R, T1, R, DEN, d, order)
                        _mul(R, T3, R, SIM, R, F0, d, order)
                        _mul(R, T2, R, T3, R, T1, d, order)
                        _mul(R, T3, R, T2, R, STAY, d, order)
                        _lin(R, T1, R, ONE, 1.0, R, T2, -1.0, m)
                        _mul(R, T2, R, T1, rec, n, d, order)
                        _lin(R, SIM, R, T3, 1.0, R, T2, 1.0, m)

                    # predict: pS = bS stay + (1 - bS) rec
                    _mul(R, T3, R, BS, R, STAY, d, order)
                    _lin(R, T1, R, ONE, 1.0, R, BS, -1.0, m)
                    _mul(R, T2, R, T1, rec, n, d, order)
                    _lin(R, PS, R, T3, 1.0, R, T2, 1.0, m)
                    _lin(R, PI, R, ONE, 1.0, R, PS, -1.0, m)
                    # correct
                    yy = y[t - 1, n]
                    if yy < 0:
                        _const(R, EMS, 1.0, m)
                        _const(R, EMI, 1.0, m)
                    elif yy != 0:
                        _copy(R, EMS, det, 2 * n, m)
                        _copy(R, EMI, det, 2 * n + 1, m)
                    else:
                        _lin(R, EMS, R, ONE, 1.0, det, 2 * n, -1.0, m)
                        _lin(R, EMI, R, ONE, 1.0, det, 2 * n + 1, -1.0, m)
                    _mul(R, US, R, PS, R, EMS, d, order)
                    _mul(R, UI, R, PI, R, EMI, d, order)
                    _lin(R, Z, R, US, 1.0, R, UI, 1.0, m)
                    if R[Z, 0] <= 0.0:
                        dead = True
                        _const(R, BS, 0.5, m)
                    else:
                        _recip(R, T1, R, Z, d, order)
                        _mul(R, BS, R, US, R, T1, d, order)
                        if not dead:
                            _log(R, T1, R, Z, d, order)
                            _lin(R, LL, R, LL, 1.0, R, T1, 1.0, m)
                for i in range(m):
                    out[p, n, i] = R[LL, i]
                if dead:
                    for i in range(m):
                        out[p, n, i] = 0.0
                    out[p, n, 0] = -np.inf
        return out, 0

    return kernel


_KERNELS = {}


def _kernel(d, order):
    key = (d, order)
    if key not in _KERNELS:
        _KERNELS[key] = _build(d, order)
    return _KERNELS[key]


# numpy side ------------------------------------------------------------------

def applies(model, partition, laws):
    """True when the compiled path reproduces the generic filter for this call."""
    from .models import SIS, SEIR
    if not isinstance(model, SIS) or isinstance(model, SEIR) or model.homogeneous_weight is None:
        return False
    if laws.get("weights") is not None:
        return False
    return partition.max_block == 1


def _jet(x, shape, d, order):
    """Flatten a value or Dual of the given shape into jets (..., 1 + d + d*d)."""
    m = 1 + d + d * d
    out = np.zeros(shape + (m,))
    if du.is_dual(x):
        out[..., 0] = np.broadcast_to(x.val, shape)
        out[..., 1:1 + d] = np.broadcast_to(x.jac, shape + (d,))
        if order >= 2 and x.hes is not None:
            out[..., 1 + d:] = np.broadcast_to(x.hes, shape + (d, d)).reshape(shape + (d * d,))
    else:
        out[..., 0] = np.broadcast_to(np.asarray(x, dtype=float), shape)
    return out


def _order(laws):
    for v in laws.values():
        if du.is_dual(v):
            return v.nvars, v.order
    return 0, 0


def singleton_logliks(model, laws, y, trajs, variant, include_feedback_terms=True):
    """(P, N) conditional log-likelihoods, plain or Dual, from the compiled kernel."""
    d, order = _order(laws)
    n = model.n_components
    gam = laws["gamma"]
    rec = -du.expm1(-gam)
    lrec = du.log(rec)
    neggam = -gam
    trajs = np.ascontiguousarray(np.asarray(trajs), dtype=np.int8)
    if trajs.shape[1] < y.shape[0] + 1:
        raise ValueError("trajectories shorter than the observation horizon")
    trajs = trajs[:, : y.shape[0] + 1]
    feedback = variant == "feedback"
    with_fb = 1 if include_feedback_terms else 0
    out, status = _kernel(d, order)(
        trajs, np.ascontiguousarray(y, dtype=np.int64), float(model.homogeneous_weight),
        _jet(laws["lambda"], (n,), d, order), _jet(laws["iota"], (1,), d, order),
        _jet(rec, (n,), d, order), _jet(lrec, (n,), d, order), _jet(neggam, (n,), d, order),
        _jet(laws["initial"][:, 0], (n,), d, order),
        _jet(laws["detection"][:, :2], (n, 2), d, order).reshape(2 * n, -1),
        feedback, with_fb,
    )
    if status == 1:
        raise UndefinedConditionalError("the complement move has probability zero for every block configuration")
    if status == 2:
        raise UndefinedConditionalError("feedback denominator is zero")
    if order == 0:
        return out[..., 0]
    jac = out[..., 1:1 + d]
    hes = out[..., 1 + d:].reshape(out.shape[:-1] + (d, d)) if order >= 2 else None
    return du.Dual(out[..., 0], jac, hes)
