import numpy as np
import pytest

from lbcnm.combinatorics import enumerate_combinations
from lbcnm.core import LbcLayerState, RemovalSchedule, remove_candidates
from lbcnm.criteria import Criterion, combo_score
from lbcnm.data import synthetic_blobs
from lbcnm.numerics import SgdConfig, mlp
from lbcnm.train import median_by_kind, run_comparison

T24 = enumerate_combinations(2, 4)


def test_parse_aliases():
    assert Criterion.parse("S").kind == "lbc_score"
    assert Criterion.parse("s-inverse").kind == "lbc_score_inverse"
    assert Criterion.parse("gradient").kind == "taylor_gradient"
    crit = Criterion.parse("random:7")
    assert (crit.kind, crit.seed) == ("random", 7)
    assert Criterion.parse(str(crit)) == crit
    with pytest.raises(ValueError):
        Criterion.parse("entropy")


def test_magnitude_best_combo():
    scores = combo_score("magnitude", T24, np.array([[4.0, -3.0, 2.0, 1.0]]))
    assert scores[0].argmax() == T24.index((0, 1))
    assert scores[0].max() == 7.0


def test_inverse_reverses_removal_order():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(4, 6))
    lbc = combo_score("lbc_score", T24, np.zeros((4, 4)), scores=s)
    inv = combo_score("lbc_score_inverse", T24, np.zeros((4, 4)), scores=s)
    assert np.array_equal(lbc.argmin(axis=1), inv.argmax(axis=1))
    assert np.array_equal(lbc.argmax(axis=1), inv.argmin(axis=1))


def test_taylor_needs_accumulator():
    with pytest.raises(ValueError):
        combo_score("taylor_gradient", T24, np.zeros((1, 4)))
    acc = np.array([[0.5, 0.1, 0.2, 0.9]])
    assert combo_score("taylor_gradient", T24, np.zeros((1, 4)), running_taylor=acc)[0].argmax() == T24.index((0, 3))


def test_random_is_reproducible():
    def select():
        state = LbcLayerState(5, T24)
        rng = np.random.default_rng(Criterion.parse("random:3").seed)
        sched = RemovalSchedule(0, 3, 6)
        for t in range(4):
            remove_candidates(state, T24, sched, t, ranking=combo_score("random", T24, np.zeros((5, 4)), rng=rng))
        return state.alive.copy()
    assert np.array_equal(select(), select())


def test_every_criterion_meets_terminal_constraint():
    data = synthetic_blobs(seed=1, classes=3, dim=8, samples=90)
    rows = run_comparison(lambda s: mlp([8, 4, 3]).init(np.random.default_rng(s)), data,
                          ["lbc_score", "lbc_score_inverse", "magnitude", "taylor_gradient", "random"], [0, 1],
                          {"cfg": SgdConfig(0.05, 0.9, 5e-4, 1, 4), "n": 2, "m": 4, "sched": (0, 2)})
    assert len(rows) == 10
    assert set(rows[0]) == {"kind", "seed", "final_train_loss", "final_val_loss", "val_accuracy", "epochs"}
    med = median_by_kind(rows)
    assert set(med) == {"lbc_score", "lbc_score_inverse", "magnitude", "taylor_gradient", "random"}
