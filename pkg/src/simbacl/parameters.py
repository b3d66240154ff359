"""Parameter layouts and the natural <-> unconstrained mapping.

Models expose parameters as named blocks on their natural scale
(probabilities in [0, 1], strictly positive rates, unrestricted regression
coefficients).  Optimisation and differentiation run on an unconstrained
flat vector: logit for probabilities, log for rates, identity otherwise.
Only the *free* entries enter that vector; the rest stay at fixed values.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dual as du
from .errors import NegativeRateError, ParameterError, ProbabilityRangeError

KINDS = ("real", "positive", "unit")


@dataclass(frozen=True)
class ParamBlock:
    name: str
    size: int
    kind: str = "real"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown parameter kind {self.kind!r}")


def check_block(block: ParamBlock, values) -> np.ndarray:
    """Coerce and validate a block of natural-scale values."""
    try:
        arr = np.asarray(values, dtype=float).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"parameter {block.name!r}: not numeric") from exc
    if arr.size != block.size:
        raise ParameterError(f"parameter {block.name!r}: expected {block.size} values, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"parameter {block.name!r}: non-finite value")
    if block.kind == "positive" and np.any(arr <= 0):
        raise NegativeRateError(f"parameter {block.name!r}: rates must be strictly positive")
    if block.kind == "unit" and np.any((arr < 0) | (arr > 1)):
        raise ProbabilityRangeError(f"parameter {block.name!r}: probabilities must lie in [0, 1]")
    return arr


def to_unconstrained(kind, x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        if kind == "positive":
            return np.log(x)
        if kind == "unit":
            return np.log(x) - np.log1p(-x)
    return x.copy()


def to_natural(kind, u):
    if kind == "positive":
        return du.exp(u)
    if kind == "unit":
        return du.sigmoid(u)
    return u


class ThetaMap:
    """Packs the free entries of a natural parameter dict into a flat vector.

    Parameters
    ----------
    layout : sequence of ParamBlock
    base : dict
        Natural-scale values for every block; non-free entries are taken
        from here.
    free : dict, optional
        ``name -> boolean mask`` (or ``True`` for the whole block).  Blocks
        missing from the dict are fixed.  Defaults to every block free.
    """

    def __init__(self, layout, base, free=None):
        self.layout = tuple(layout)
        self.base = {b.name: check_block(b, base[b.name]) for b in self.layout}
        masks = {}
        for b in self.layout:
            m = True if free is None else free.get(b.name, False)
            m = np.broadcast_to(np.asarray(m, dtype=bool), (b.size,)).copy()
            masks[b.name] = m
        self.masks = masks
        self.names = []
        for b in self.layout:
            for i in np.flatnonzero(masks[b.name]):
                self.names.append(b.name if b.size == 1 else f"{b.name}[{i}]")
        self.dim = len(self.names)

    def pack(self, natural=None) -> np.ndarray:
        """Unconstrained free vector from a natural dict (default: the base)."""
        natural = self.base if natural is None else natural
        out = []
        for b in self.layout:
            vals = check_block(b, natural[b.name])
            m = self.masks[b.name]
            u = to_unconstrained(b.kind, vals[m])
            if not np.all(np.isfinite(u)):
                raise ParameterError(f"parameter {b.name!r}: free entry on the boundary of its domain")
            out.append(u)
        return np.concatenate(out) if out else np.zeros(0)

    def unpack(self, theta, order=0):
        """Natural dict from an unconstrained vector.

        ``order=0`` returns plain arrays; ``order=1/2`` seeds duals so every
        natural entry carries derivatives with respect to ``theta``.
        """
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ParameterError(f"theta must have length {self.dim}, got shape {theta.shape}")
        var = du.Dual.variables(theta, order) if order > 0 else theta
        out = {}
        pos = 0
        for b in self.layout:
            m = self.masks[b.name]
            k = int(m.sum())
            if k == 0:
                out[b.name] = self.base[b.name].copy()
                continue
            nat = to_natural(b.kind, var[pos:pos + k])
            pos += k
            if k == b.size:
                out[b.name] = nat
                continue
            entries = []
            j = 0
            for i in range(b.size):
                if m[i]:
                    entries.append(nat[j])
                    j += 1
                else:
                    entries.append(self.base[b.name][i])
            out[b.name] = du.stack(entries)
        return out

    def natural_values(self, theta) -> dict:
        return {k: np.asarray(v, dtype=float) for k, v in self.unpack(theta, 0).items()}
