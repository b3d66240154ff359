"""Disjoint covers of the component index set."""
from __future__ import annotations

import numpy as np

from .errors import CapacityError, PartitionCoverError, PartitionError, PartitionOverlapError

BLOCK_CAP = 2 ** 12


class Partition:
    """Blocks of component indices, validated to be disjoint and covering.

    >>> Partition.pairs(4).blocks
    (array([0, 1]), array([2, 3]))
    """

    def __init__(self, blocks, n_components, n_states=None, cap=BLOCK_CAP):
        self.n_components = int(n_components)
        blocks = tuple(np.asarray(b, dtype=np.int64).reshape(-1) for b in blocks)
        if any(len(b) == 0 for b in blocks):
            raise PartitionError("blocks must be nonempty")
        flat = np.concatenate(blocks) if blocks else np.zeros(0, dtype=np.int64)
        if np.any((flat < 0) | (flat >= self.n_components)):
            raise PartitionCoverError("block index outside [0, N)")
        if len(np.unique(flat)) != len(flat):
            raise PartitionOverlapError("blocks overlap")
        if len(flat) != self.n_components:
            raise PartitionCoverError("blocks do not cover every component")
        self.blocks = blocks
        if n_states is not None:
            self.check_capacity(n_states, cap)

    def check_capacity(self, n_states, cap=BLOCK_CAP):
        size = n_states ** self.max_block
        if size > cap:
            raise CapacityError(f"block joint space {size} exceeds the cap of {cap}")

    @property
    def max_block(self):
        return max(len(b) for b in self.blocks)

    def __len__(self):
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    def __repr__(self):
        return f"Partition({[b.tolist() for b in self.blocks]})"

    def groups(self):
        """``size -> (block ids, member matrix)`` grouping equal-sized blocks."""
        out = {}
        for i, b in enumerate(self.blocks):
            out.setdefault(len(b), []).append(i)
        return {k: (np.array(ids), np.stack([self.blocks[i] for i in ids])) for k, ids in sorted(out.items())}

    @classmethod
    def singletons(cls, n):
        return cls([[i] for i in range(n)], n)

    @classmethod
    def pairs(cls, n):
        if n % 2:
            raise PartitionError("the pairs partition needs an even number of components")
        return cls([[i, i + 1] for i in range(0, n, 2)], n)

    @classmethod
    def whole(cls, n):
        return cls([list(range(n))], n)

    @classmethod
    def parse(cls, spec, n, n_states=None):
        """``singletons``, ``pairs``, ``whole`` or explicit ``"0,1;2;3"``."""
        spec = str(spec).strip()
        if spec == "singletons":
            p = cls.singletons(n)
        elif spec == "pairs":
            p = cls.pairs(n)
        elif spec in ("whole", "full"):
            p = cls.whole(n)
        else:
            try:
                blocks = [[int(v) for v in part.split(",") if v.strip()] for part in spec.split(";")]
            except ValueError:
                raise PartitionError(f"cannot parse partition spec {spec!r}") from None
            p = cls(blocks, n)
        if n_states is not None:
            p.check_capacity(n_states)
        return p
