"""Combination scores, the cubic removal schedule and mask derivation.

Each sparsified layer keeps a ``(G, C)`` score matrix over the ``C = C(m, n)``
candidate subsets of every group. Candidates are removed on a cubic schedule,
lowest score first, until one subset per group survives; the weight mask is
the union of the surviving subsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .combinatorics import membership_sum


@dataclass(frozen=True)
class RemovalSchedule:
    t_i: int
    t_f: int
    c: int

    def __post_init__(self):
        if not 0 <= self.t_i <= self.t_f:
            raise ValueError(f"need 0 <= t_i <= t_f, got t_i={self.t_i}, t_f={self.t_f}")
        if self.c < 1:
            raise ValueError("collection size must be positive")

    def validate(self, total_epochs):
        if self.t_f >= total_epochs:
            raise ValueError(f"t_f={self.t_f} must be < total epochs {total_epochs}")


def cumulative_removals(sched, t):
    """Total number of candidates removed per group by the end of epoch ``t``.

    ``ceil((c-1) * (1 - (1 - (t-t_i)/(t_f-t_i))**3))`` evaluated in exact
    rational arithmetic, 0 at ``t_i``. When ``t_i == t_f`` all ``c-1``
    removals happen at once.
    """
    if not sched.t_i <= t <= sched.t_f:
        raise ValueError(f"epoch {t} outside removal window [{sched.t_i}, {sched.t_f}]")
    if sched.t_f == sched.t_i:
        return sched.c - 1
    if t == sched.t_i:
        return 0
    frac = Fraction(t - sched.t_i, sched.t_f - sched.t_i)
    return math.ceil((sched.c - 1) * (1 - (1 - frac) ** 3))


def clamped_removals(sched, t):
    if t < sched.t_i:
        return 0
    if t > sched.t_f:
        return sched.c - 1
    return cumulative_removals(sched, t)


class LbcLayerState:
    """Scores, surviving candidates and mask for one layer's ``G`` groups."""

    def __init__(self, g, table, init_score=1.0):
        self.table = table
        self.scores = np.full((g, table.c), init_score, dtype=np.float64)
        self.alive = np.ones((g, table.c), dtype=bool)
        self.removed_cum = np.zeros(g, dtype=np.int64)
        self.mask = derive_mask(self, table)

    @property
    def g(self):
        return self.scores.shape[0]

    def alive_counts(self):
        return self.alive.sum(axis=1)

    def check(self):
        counts = self.alive_counts()
        assert np.all(counts == self.table.c - self.removed_cum)
        assert np.all(counts >= 1)
        assert np.array_equal(self.mask, derive_mask(self, self.table))


def derive_mask(state, table):
    """``mask[g, j] = 1`` iff slot ``j`` lies in at least one surviving candidate."""
    return (membership_sum(table, state.alive) > 0).astype(np.uint8)


def select_removals(ranking, alive, k):
    """Boolean ``(G, C)`` matrix of the ``k[g]`` lowest-ranked alive candidates.

    Ties go to the lower candidate index (stable sort).
    """
    key = np.where(alive, ranking, np.inf)
    rank = np.argsort(np.argsort(key, axis=1, kind="stable"), axis=1, kind="stable")
    return (rank < np.asarray(k)[:, None]) & alive


def remove_candidates(state, table, sched, t, ranking=None):
    """Advance the surviving collection to epoch ``t`` of the schedule.

    ``ranking`` defaults to the layer's learned scores; any other ``(G, C)``
    criterion plugs in here unchanged. Removed candidates keep their score.
    """
    target = clamped_removals(sched, t)
    k = target - state.removed_cum
    if np.any(k < 0):
        raise RuntimeError(f"removal target {target} below already-removed count at epoch {t}")
    if not np.any(k):
        return state
    ranking = state.scores if ranking is None else np.asarray(ranking, dtype=np.float64)
    if ranking.shape != state.scores.shape:
        raise ValueError(f"ranking shape {ranking.shape} does not match scores {state.scores.shape}")
    if np.any(np.isnan(ranking)):
        raise FloatingPointError("NaN in candidate ranking")
    kill = select_removals(ranking, state.alive, k)
    state.alive &= ~kill
    state.removed_cum += kill.sum(axis=1)
    state.mask = derive_mask(state, table)
    return state


def score_gradients(state, table, weights, weight_grads):
    """Straight-through gradient of the loss w.r.t. each candidate score.

    For an alive candidate the gradient is ``sum_i W[g, i] * dL/d(B*W)[g, i]``
    over its slots; removed candidates get 0. ``weights`` and ``weight_grads``
    are ``(G, M)`` group views.
    """
    contrib = np.asarray(weights, dtype=np.float64) * np.asarray(weight_grads, dtype=np.float64)
    grads = contrib @ table.member.T.astype(np.float64)
    grads[~state.alive] = 0.0
    return grads


def update_scores(state, grads, score_lr):
    """Plain SGD on alive scores; removed candidates are frozen."""
    state.scores = np.where(state.alive, state.scores - score_lr * grads, state.scores)
    return state
