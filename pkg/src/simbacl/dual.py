"""Vectorised forward-mode automatic differentiation.

A :class:`Dual` wraps an ndarray of values together with first (and
optionally second) derivatives with respect to ``d`` seed variables.
Derivative axes trail the value axes::

    val.shape == S
    jac.shape == S + (d,)
    hes.shape == S + (d, d)      # or None for first-order sweeps

The module-level functions (``exp``, ``log``, ``where``, ``einsum`` ...)
accept either plain arrays or duals, so model code is written once and runs
in both modes.
"""
from __future__ import annotations

import string

import numpy as np


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


class Dual:
    __slots__ = ("val", "jac", "hes")
    __array_ufunc__ = None

    def __init__(self, val, jac, hes=None):
        self.val = np.asarray(val, dtype=float)
        self.jac = jac
        self.hes = hes

    @classmethod
    def variables(cls, x, order=1):
        """Seed a length-d vector of independent variables."""
        x = np.asarray(x, dtype=float)
        d = x.shape[0]
        hes = np.zeros((d, d, d)) if order >= 2 else None
        return cls(x.copy(), np.eye(d), hes)

    @classmethod
    def constant(cls, x, d, order=1):
        x = np.asarray(x, dtype=float)
        hes = np.zeros(x.shape + (d, d)) if order >= 2 else None
        return cls(x, np.zeros(x.shape + (d,)), hes)

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self):
        return self.val.ndim

    @property
    def nvars(self):
        return self.jac.shape[-1]

    @property
    def order(self):
        return 1 if self.hes is None else 2

    def __len__(self):
        return len(self.val)

    def __repr__(self):
        return f"Dual(val={self.val!r}, jac={self.jac!r})"

    # arithmetic -------------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Dual):
            val = self.val + other.val
            jac = self.jac + other.jac
            hes = _add_opt(self.hes, other.hes)
        else:
            val = self.val + other
            jac = self.jac
            hes = self.hes
        return _fit(val, jac, hes)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.jac, None if self.hes is None else -self.hes)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Dual):
            o = np.asarray(other, dtype=float)
            val = self.val * o
            jac = self.jac * o[..., None]
            hes = None if self.hes is None else self.hes * o[..., None, None]
            return _fit(val, jac, hes)
        a, b = self, other
        val = a.val * b.val
        jac = a.jac * b.val[..., None] + b.jac * a.val[..., None]
        hes = None
        if a.hes is not None or b.hes is not None:
            hes = _outer(a.jac, b.jac)
            hes = hes + np.swapaxes(hes, -1, -2)
            if a.hes is not None:
                hes = hes + a.hes * b.val[..., None, None]
            if b.hes is not None:
                hes = hes + b.hes * a.val[..., None, None]
        return _fit(val, jac, hes)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Dual):
            return self * (1.0 / np.asarray(other, dtype=float))
        return self * reciprocal(other)

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, p):
        if isinstance(p, Dual):
            return exp(log(self) * p)
        return power(self, p)

    def __rpow__(self, base):
        return exp(self * np.log(base))

    # structure --------------------------------------------------------------
    def __getitem__(self, idx):
        idx = _expand_index(idx, self.val.ndim)
        return Dual(self.val[idx], self.jac[idx], None if self.hes is None else self.hes[idx])

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        val = self.val.reshape(shape)
        jac = self.jac.reshape(val.shape + self.jac.shape[-1:])
        hes = None if self.hes is None else self.hes.reshape(val.shape + self.hes.shape[-2:])
        return Dual(val, jac, hes)

    def sum(self, axis=None, keepdims=False):
        axes = _norm_axes(axis, self.val.ndim)
        val = self.val.sum(axis=axes, keepdims=keepdims)
        jac = self.jac.sum(axis=axes, keepdims=keepdims)
        hes = None if self.hes is None else self.hes.sum(axis=axes, keepdims=keepdims)
        return Dual(val, jac, hes)

    def mean(self, axis=None, keepdims=False):
        axes = _norm_axes(axis, self.val.ndim)
        count = int(np.prod([self.val.shape[a] for a in axes])) if axes else 1
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def swapaxes(self, a1, a2):
        n = self.val.ndim
        a1, a2 = a1 % n, a2 % n
        return Dual(
            np.swapaxes(self.val, a1, a2),
            np.swapaxes(self.jac, a1, a2),
            None if self.hes is None else np.swapaxes(self.hes, a1, a2),
        )


def _add_opt(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _fit(val, jac, hes):
    """Broadcast derivative arrays to the (possibly larger) value shape."""
    d = jac.shape[-1]
    if jac.shape[:-1] != val.shape:
        jac = np.broadcast_to(jac, val.shape + (d,))
    if hes is not None and hes.shape[:-2] != val.shape:
        hes = np.broadcast_to(hes, val.shape + (d, d))
    return Dual(val, jac, hes)


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand_index(idx, ndim):
    """Replace Ellipsis so that trailing derivative axes are never indexed."""
    if not isinstance(idx, tuple):
        idx = (idx,)
    if not any(i is Ellipsis for i in idx):
        return idx
    used = 0
    for i in idx:
        if i is None or i is Ellipsis:
            continue
        if isinstance(i, np.ndarray) and i.dtype == bool:
            used += i.ndim
        else:
            used += 1
    pos = next(k for k, i in enumerate(idx) if i is Ellipsis)
    fill = (slice(None),) * (ndim - used)
    return idx[:pos] + fill + idx[pos + 1:]


# elementwise functions -------------------------------------------------------

def _chain(x, f0, f1, f2):
    jac = f1[..., None] * x.jac
    hes = None
    if x.hes is not None:
        hes = f2[..., None, None] * _outer(x.jac, x.jac) + f1[..., None, None] * x.hes
    return Dual(f0, jac, hes)


def value(x):
    return x.val if isinstance(x, Dual) else np.asarray(x, dtype=float)


def is_dual(x):
    return isinstance(x, Dual)


def exp(x):
    if not isinstance(x, Dual):
        return np.exp(x)
    e = np.exp(x.val)
    return _chain(x, e, e, e)


def log(x):
    """Natural log; derivatives at zero are set to zero (the value is -inf)."""
    if not isinstance(x, Dual):
        with np.errstate(divide="ignore"):
            return np.log(x)
    v = x.val
    with np.errstate(divide="ignore"):
        f0 = np.log(v)
        inv = np.where(v != 0, 1.0 / np.where(v != 0, v, 1.0), 0.0)
    return _chain(x, f0, inv, -inv * inv)


def log1p(x):
    if not isinstance(x, Dual):
        return np.log1p(x)
    v = x.val
    with np.errstate(divide="ignore"):
        inv = 1.0 / (1.0 + v)
    return _chain(x, np.log1p(v), inv, -inv * inv)


def expm1(x):
    if not isinstance(x, Dual):
        return np.expm1(x)
    e = np.exp(x.val)
    return _chain(x, np.expm1(x.val), e, e)


def sigmoid(x):
    if not isinstance(x, Dual):
        return _sigmoid(np.asarray(x, dtype=float))
    s = _sigmoid(x.val)
    ds = s * (1.0 - s)
    return _chain(x, s, ds, ds * (1.0 - 2.0 * s))


def _sigmoid(v):
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def reciprocal(x):
    if not isinstance(x, Dual):
        return 1.0 / np.asarray(x, dtype=float)
    inv = 1.0 / x.val
    return _chain(x, inv, -inv * inv, 2.0 * inv * inv * inv)


def power(x, p):
    p = float(p)
    if not isinstance(x, Dual):
        return np.power(x, p)
    v = x.val
    f0 = v ** p
    f1 = p * v ** (p - 1.0) if p != 0 else np.zeros_like(v)
    f2 = p * (p - 1.0) * v ** (p - 2.0) if p not in (0.0, 1.0) else np.zeros_like(v)
    return _chain(x, f0, f1, f2)


def sqrt(x):
    return power(x, 0.5)


def square(x):
    return x * x


# structural functions --------------------------------------------------------

def _lift(x, like):
    """Turn a constant into a Dual matching ``like``'s derivative count/order."""
    if isinstance(x, Dual):
        return x
    x = np.asarray(x, dtype=float)
    return Dual.constant(x, like.nvars, like.order)


def _first_dual(xs):
    for x in xs:
        if isinstance(x, Dual):
            return x
    return None


def where(cond, a, b):
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.where(cond, a, b)
    ref = _first_dual((a, b))
    a, b = _lift(a, ref), _lift(b, ref)
    cond = np.asarray(cond, dtype=bool)
    val = np.where(cond, a.val, b.val)
    jac = np.where(cond[..., None], a.jac, b.jac)
    hes = None
    if a.hes is not None or b.hes is not None:
        ah = a.hes if a.hes is not None else np.zeros(a.val.shape + (a.nvars, a.nvars))
        bh = b.hes if b.hes is not None else np.zeros(b.val.shape + (b.nvars, b.nvars))
        hes = np.where(cond[..., None, None], ah, bh)
    return _fit(val, jac, hes)


def stack(xs, axis=0):
    xs = list(xs)
    ref = _first_dual(xs)
    if ref is None:
        arrs = np.broadcast_arrays(*[np.asarray(x, dtype=float) for x in xs])
        return np.stack(arrs, axis=axis)
    vals = [np.asarray(value(x), dtype=float) for x in xs]
    shape = np.broadcast_shapes(*[v.shape for v in vals])
    duals = [broadcast_to(_lift(x, ref), shape) for x in xs]
    ax = axis % (len(shape) + 1)
    val = np.stack([x.val for x in duals], axis=ax)
    jac = np.stack([x.jac for x in duals], axis=ax)
    hes = None
    if ref.hes is not None:
        hes = np.stack([x.hes for x in duals], axis=ax)
    return Dual(val, jac, hes)


def concatenate(xs, axis=0):
    xs = list(xs)
    ref = _first_dual(xs)
    if ref is None:
        return np.concatenate([np.asarray(x, dtype=float) for x in xs], axis=axis)
    duals = [_lift(x, ref) for x in xs]
    ax = axis % duals[0].val.ndim
    val = np.concatenate([x.val for x in duals], axis=ax)
    jac = np.concatenate([x.jac for x in duals], axis=ax)
    hes = None if ref.hes is None else np.concatenate([x.hes for x in duals], axis=ax)
    return Dual(val, jac, hes)


def broadcast_to(x, shape):
    if not isinstance(x, Dual):
        return np.broadcast_to(x, shape)
    shape = tuple(shape)
    if x.val.shape == shape:
        return x
    d = x.nvars
    hes = None if x.hes is None else np.broadcast_to(x.hes, shape + (d, d))
    return Dual(np.broadcast_to(x.val, shape), np.broadcast_to(x.jac, shape + (d,)), hes)


def take_along_axis(x, indices, axis):
    if not isinstance(x, Dual):
        return np.take_along_axis(x, indices, axis)
    ax = axis % x.val.ndim
    val = np.take_along_axis(x.val, indices, ax)
    jac = np.take_along_axis(x.jac, indices[..., None], ax)
    hes = None if x.hes is None else np.take_along_axis(x.hes, indices[..., None, None], ax)
    return Dual(val, jac, hes)


def total(x, axis=None, keepdims=False):
    if isinstance(x, Dual):
        return x.sum(axis=axis, keepdims=keepdims)
    return np.sum(x, axis=axis, keepdims=keepdims)


def prod_last(x):
    """Product over the last axis by repeated multiplication (small axes)."""
    out = x[..., 0]
    for k in range(1, value(x).shape[-1]):
        out = out * x[..., k]
    return out


def logsumexp(x, axis=-1):
    """Stable log-sum-exp; the max shift is treated as a constant."""
    v = value(x)
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = total(exp(x - m), axis=axis)
    return log(s) + np.squeeze(m, axis=axis)


def einsum(subscripts, *operands):
    """``np.einsum`` with any number of dual operands (explicit output only)."""
    ins, out = subscripts.replace(" ", "").split("->")
    ins = ins.split(",")
    duals = [i for i, op in enumerate(operands) if isinstance(op, Dual)]
    vals = [value(op) for op in operands]
    val = np.einsum(subscripts, *vals, optimize=True)
    if not duals:
        return val
    free = [c for c in string.ascii_letters if c not in subscripts]
    a, b = free[0], free[1]
    ref = operands[duals[0]]
    jac = 0.0
    for i in duals:
        subs = list(ins)
        subs[i] = subs[i] + a
        ops = list(vals)
        ops[i] = operands[i].jac
        jac = jac + np.einsum(",".join(subs) + "->" + out + a, *ops, optimize=True)
    hes = None
    if ref.hes is not None:
        hes = 0.0
        for i in duals:
            subs = list(ins)
            subs[i] = subs[i] + a + b
            ops = list(vals)
            ops[i] = operands[i].hes
            hes = hes + np.einsum(",".join(subs) + "->" + out + a + b, *ops, optimize=True)
            for j in duals:
                if j == i:
                    continue
                subs = list(ins)
                subs[i] = subs[i] + a
                subs[j] = subs[j] + b
                ops = list(vals)
                ops[i] = operands[i].jac
                ops[j] = operands[j].jac
                hes = hes + np.einsum(",".join(subs) + "->" + out + a + b, *ops, optimize=True)
    return Dual(val, jac, hes)


def vecmat(v, m):
    """Batched row-vector times matrix: out[..., j] = Σ_i v[..., i] m[..., i, j]."""
    c = value(v).shape[-1]
    if c > 8:
        return einsum("...i,...ij->...j", v, m)
    out = v[..., 0:1] * m[..., 0, :]
    for i in range(1, c):
        out = out + v[..., i:i + 1] * m[..., i, :]
    return out


def matvec(matrix, x):
    """Constant matrix (..., k) contracted with the leading axis of ``x``."""
    m = np.asarray(matrix, dtype=float)
    if not isinstance(x, Dual):
        return np.tensordot(m, x, axes=(-1, 0))
    val = np.tensordot(m, x.val, axes=(-1, 0))
    jac = np.tensordot(m, x.jac, axes=(-1, 0))
    hes = None if x.hes is None else np.tensordot(m, x.hes, axes=(-1, 0))
    return Dual(val, jac, hes)


def gradient(x):
    """First derivatives of a scalar dual as a length-d vector."""
    return np.asarray(x.jac).reshape(-1, x.nvars)[0] if x.val.ndim == 0 else np.asarray(x.jac)


def hessian(x):
    h = np.asarray(x.hes)
    return 0.5 * (h + np.swapaxes(h, -1, -2))
