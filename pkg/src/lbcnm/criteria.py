"""Candidate-ranking criteria that can stand in for the learned scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("lbc_score", "lbc_score_inverse", "magnitude", "taylor_gradient", "random")

ALIASES = {
    "s": "lbc_score",
    "lbc": "lbc_score",
    "s-inverse": "lbc_score_inverse",
    "inverse": "lbc_score_inverse",
    "gradient": "taylor_gradient",
    "taylor": "taylor_gradient",
}


@dataclass(frozen=True)
class Criterion:
    kind: str = "lbc_score"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown criterion {self.kind!r}; expected one of {KINDS}")

    @classmethod
    def parse(cls, text, seed=0):
        """Accepts ``magnitude``, ``S-inverse``, ``random:7`` and similar spellings."""
        name, _, arg = str(text).partition(":")
        name = name.strip().lower()
        name = ALIASES.get(name, name)
        return cls(name, int(arg) if arg else seed)

    def __str__(self):
        return f"random:{self.seed}" if self.kind == "random" else self.kind


def combo_score(kind, table, weights, running_taylor=None, scores=None, rng=None):
    """``(G, C)`` ranking of candidates; the lowest-ranked ones are removed first.

    magnitude: sum of ``|W|`` over the candidate's slots (current weights).
    taylor_gradient: sum of the accumulated ``|W * dL/dW|`` over the slots.
    lbc_score / lbc_score_inverse: the learned scores, or their negation.
    random: i.i.d. uniform draws from ``rng``.
    """
    if isinstance(kind, str):
        kind = Criterion.parse(kind)
    member_t = table.member.T.astype(np.float64)
    if kind.kind == "magnitude":
        return np.abs(np.asarray(weights, dtype=np.float64)) @ member_t
    if kind.kind == "taylor_gradient":
        if running_taylor is None:
            raise ValueError("taylor_gradient criterion needs the running Taylor accumulator")
        return np.asarray(running_taylor, dtype=np.float64) @ member_t
    if kind.kind in ("lbc_score", "lbc_score_inverse"):
        if scores is None:
            raise ValueError(f"{kind.kind} criterion needs the learned score matrix")
        scores = np.asarray(scores, dtype=np.float64)
        return scores.copy() if kind.kind == "lbc_score" else -scores
    if rng is None:
        rng = np.random.default_rng(kind.seed)
    g = np.asarray(weights).shape[0]
    return rng.random((g, table.c))
