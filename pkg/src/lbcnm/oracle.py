"""Exhaustive search over joint per-group candidate assignments on tiny layers."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from .combinatorics import enumerate_combinations
from .grouping import make_group_view, scatter

MAX_EVALUATIONS = 10 ** 5


class OracleBudgetError(ValueError):
    def __init__(self, count, budget=MAX_EVALUATIONS):
        super().__init__(f"{count} joint assignments exceed the oracle budget of {budget}")
        self.count = count


@dataclass
class LinearProblem:
    """Least squares ``y ~ x @ W.T`` with ``W`` of shape ``(out, in)`` grouped along ``in``."""

    weights: np.ndarray
    x: np.ndarray
    y: np.ndarray
    n: int
    m: int

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(len(self.x), -1)
        self.view = make_group_view(self.weights.shape, self.m, "linear")
        self.table = enumerate_combinations(self.n, self.m)

    def mask_for(self, assignment):
        return scatter(self.view, self.table.member[np.asarray(assignment)])

    def loss(self, mask, refit="closed_form_ls"):
        mask = mask.astype(bool)
        if refit == "none" or refit is None:
            w = self.weights * mask
        elif refit == "closed_form_ls":
            w = np.zeros_like(self.weights)
            for o in range(w.shape[0]):
                cols = np.flatnonzero(mask[o])
                w[o, cols] = np.linalg.lstsq(self.x[:, cols], self.y[:, o], rcond=None)[0]
        else:
            w = self._descend(mask, int(refit))
        r = self.x @ w.T - self.y
        return float(np.mean(r * r))

    def _descend(self, mask, steps):
        # plain gradient descent on the surviving coordinates, step 1/L
        scale = 2.0 / self.y.size
        lip = scale * np.linalg.eigvalsh(self.x.T @ self.x)[-1]
        w = self.weights * mask
        for _ in range(steps):
            grad = scale * (self.x @ w.T - self.y).T @ self.x
            w = w - (grad * mask) / lip
        return w

    def dense_loss(self):
        beta = np.linalg.lstsq(self.x, self.y, rcond=None)[0]
        r = self.x @ beta - self.y
        return float(np.mean(r * r))


@dataclass
class LossTable:
    assignments: np.ndarray  # (rows, G), sorted by loss
    losses: np.ndarray

    def __len__(self):
        return len(self.losses)

    @property
    def best(self):
        return tuple(int(a) for a in self.assignments[0])

    def loss_of(self, assignment):
        hit = np.flatnonzero(np.all(self.assignments == np.asarray(assignment), axis=1))
        if not len(hit):
            raise KeyError(f"assignment {tuple(assignment)} not in table")
        return float(self.losses[hit[0]])

    def to_csv(self, path, table=None):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["rank", "assignment", "combos", "loss"])
            for r, (a, value) in enumerate(zip(self.assignments, self.losses)):
                combos = "" if table is None else " ".join(
                    "{" + ",".join(map(str, table.combos[i])) + "}" for i in a)
                out.writerow([r, ";".join(map(str, a)), combos, repr(float(value))])


def exhaustive_best(problem, refit="closed_form_ls", budget=MAX_EVALUATIONS):
    """Evaluate every joint assignment and return ``(best assignment, sorted loss table)``.

    ``problem`` needs ``table``, ``view`` and ``loss(mask, refit)``. ``refit``
    is ``"none"``, ``"closed_form_ls"`` or an int number of gradient steps.
    """
    c, g = problem.table.c, problem.view.g
    count = c ** g
    if count > budget:
        raise OracleBudgetError(count, budget)
    assignments = np.array(list(itertools.product(range(c), repeat=g)), dtype=np.int64).reshape(count, g)
    losses = np.array([problem.loss(problem.mask_for(a), refit) for a in assignments])
    order = np.lexsort((*assignments.T[::-1], losses))
    table = LossTable(assignments[order], losses[order])
    return table.best, table


def rank_of(assignment, table, rtol=1e-9, atol=1e-12):
    """Percentile of ``assignment`` in the table: 0 is best, 1 is worst; ties share the better rank."""
    if len(table) == 1:
        return 0.0
    value = table.loss_of(assignment)
    better = np.sum(table.losses < value - (atol + rtol * abs(value)))
    return float(better) / (len(table) - 1)


def assignment_from_state(state):
    """Per-group index of the single surviving candidate."""
    counts = state.alive.sum(axis=1)
    if np.any(counts != 1):
        raise ValueError("every group must hold exactly one surviving candidate")
    return tuple(int(i) for i in state.alive.argmax(axis=1))
