"""Enumeration of the N-of-M combination collection."""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np

MAX_M = 16


class CombinationTable:
    """All ``C(m, n)`` sorted index subsets of ``range(m)`` in lexicographic order.

    ``member`` is the ``(C, m)`` 0/1 incidence matrix; ``member_of[j]`` lists
    the combination indices containing slot ``j``.
    """

    def __init__(self, n, m):
        if not 1 <= n <= m:
            raise ValueError(f"need 1 <= n <= m, got n={n}, m={m}")
        if m > MAX_M:
            raise ValueError(f"m={m} exceeds the supported maximum {MAX_M}")
        self.n = n
        self.m = m
        self.combos = np.array(list(itertools.combinations(range(m), n)), dtype=np.int64)
        member = np.zeros((len(self.combos), m), dtype=np.int64)
        np.put_along_axis(member, self.combos, 1, axis=1)
        self.member = member
        self.member_of = [np.flatnonzero(member[:, j]) for j in range(m)]
        for arr in (self.combos, self.member, *self.member_of):
            arr.setflags(write=False)

    @property
    def c(self):
        return len(self.combos)

    def __len__(self):
        return len(self.combos)

    def __repr__(self):
        return f"CombinationTable(n={self.n}, m={self.m}, c={self.c})"

    def index(self, subset):
        """Lexicographic rank of a subset (inverse of ``combos[i]``)."""
        subset = sorted(subset)
        rank, prev = 0, -1
        for k, s in enumerate(subset):
            for v in range(prev + 1, s):
                rank += math.comb(self.m - v - 1, self.n - k - 1)
            prev = s
        return rank


@lru_cache(maxsize=None)
def enumerate_combinations(n, m):
    """Shared, immutable table for the pattern ``n:m``."""
    return CombinationTable(n, m)


def membership_sum(table, alive, j=None):
    """Number of alive combinations containing slot ``j``.

    ``alive`` is a boolean vector of length ``C`` (or a ``(G, C)`` matrix).
    Without ``j`` the counts for every slot are returned.
    """
    alive = np.asarray(alive)
    if alive.shape[-1] != table.c:
        raise ValueError(f"alive has length {alive.shape[-1]}, expected {table.c}")
    counts = alive.astype(np.int64) @ table.member
    return counts if j is None else counts[..., j]
