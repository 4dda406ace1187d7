"""Acceptance suite: one test per criterion, each prints a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` (or ``python tests/test_acceptance.py``).
"""

import json

import numpy as np

from acceptance_log import record
from lbcnm.cli import main
from lbcnm.combinatorics import enumerate_combinations
from lbcnm.core import LbcLayerState, RemovalSchedule, cumulative_removals, remove_candidates, \
    score_gradients
from lbcnm.data import Dataset, planted_linear, synthetic_blobs
from lbcnm.grouping import gather, make_group_view, scatter
from lbcnm.nmformat import pack, spmm, train_flops_ratio, unpack
from lbcnm.numerics import Conv2d, conv_weight_matrix, Flatten, Linear, Network, ReLU, SgdConfig, loss, lr_at, mlp, small_conv
from lbcnm.oracle import LinearProblem, assignment_from_state, exhaustive_best, rank_of
from lbcnm.train import lbc_train, median_by_kind, run_comparison
from oracles import central_difference, loss_of, random_network, rel_err, removal_target

PATTERNS = [(2, 4), (1, 4), (2, 8), (1, 16)]


# 1 --------------------------------------------------------------------------

def toy_nets(rng, classes):
    width = 16 * int(rng.integers(1, 3))
    dense = mlp([32, width, classes]).init(rng)
    conv = small_conv(16, 4, [16], classes).init(rng)
    return [("mlp", dense, (32,)), ("conv", conv, (16, 4, 4))]


def test_criterion_1_terminal_constraint():
    checked, bad = 0, []
    for n, m in PATTERNS:
        for seed in range(3):
            rng = np.random.default_rng(seed)
            for name, net, shape in toy_nets(rng, 4):
                x = rng.normal(size=(96, *shape))
                y = rng.integers(0, 4, size=96)
                data = Dataset(x[:80], y[:80], x[80:], y[80:])
                crit = ["lbc_score", "magnitude", "random:1"][seed]
                res = lbc_train(net, data, SgdConfig(0.05, 0.9, 5e-4, 1, 5), n, m, (0, 2),
                                criterion=crit, batch_size=16, seed=seed)
                for i, view in res.views.items():
                    eff = gather(view, net.layers[i].weight * res.masks[i])
                    mask = gather(view, res.masks[i])
                    for g in range(view.g):
                        checked += 1
                        if np.count_nonzero(eff[g]) != n or mask[g].sum() != n:
                            bad.append((n, m, name, seed, i, g))
    assert record(1, "terminal N:M constraint", not bad,
                  f"{checked} groups checked over {len(PATTERNS)} patterns, {len(bad)} violations")


# 2 --------------------------------------------------------------------------

def test_criterion_2_schedule_exactness():
    rng = np.random.default_rng(0)
    mismatches, cells = [], 0
    for n, m in PATTERNS + [(3, 6), (1, 1)]:
        table = enumerate_combinations(n, m)
        c = table.c
        for t_i in (0, 1, 3):
            for span in (0, 1, 2, 5, 10):
                t_f = t_i + span
                sched = RemovalSchedule(t_i, t_f, c)
                if span:
                    if cumulative_removals(sched, t_i) != 0 or cumulative_removals(sched, t_f) != c - 1:
                        mismatches.append(("endpoint", c, t_i, t_f))
                elif cumulative_removals(sched, t_i) != c - 1:
                    mismatches.append(("degenerate", c, t_i))
                state = LbcLayerState(3, table)
                for t in range(t_f + 3):
                    state.scores = rng.normal(size=state.scores.shape)
                    if t >= t_i:
                        remove_candidates(state, table, sched, t)
                    cells += 1
                    if not np.all(state.alive_counts() == c - removal_target(c, t_i, t_f, t)):
                        mismatches.append((c, t_i, t_f, t))
    # the same counts observed through a real training run
    data = synthetic_blobs(seed=0, classes=3, dim=8, samples=120)
    net = mlp([8, 8, 3]).init(np.random.default_rng(0))
    res = lbc_train(net, data, SgdConfig(0.05, 0.9, 5e-4, 1, 10), 2, 8, (2, 7), batch_size=32)
    for e in res.events:
        want = 28 - removal_target(28, 2, 7, e["epoch"])
        for v in e["alive"].values():
            cells += 1
            if v["min"] != want or v["max"] != want:
                mismatches.append(("train", e["epoch"]))
    assert record(2, "schedule exactness", not mismatches,
                  f"{cells} (C, t_i, t_f, t) cells incl. t_i = t_f, {len(mismatches)} mismatches")


# 3 --------------------------------------------------------------------------

def random_sparse_net(rng, m):
    """Depth 1-3 net whose weighted layers all have input width divisible by ``m``."""
    depth = int(rng.integers(1, 4))
    if rng.random() < 0.4:
        k = int(rng.choice([1, 3]))
        layers = [Conv2d(m, m, k, padding=k // 2, dtype=np.float64), ReLU(), Flatten()]
        shape, width = (m, 3, 3), m * 9
        depth = max(depth - 1, 1)
    else:
        width, layers = m * int(rng.integers(1, 3)), []
        shape = (width,)
    for j in range(depth):
        out = m * int(rng.integers(1, 3)) if j < depth - 1 else int(rng.integers(1, 4))
        layers.append(Linear(width, out, bias=bool(rng.random() < 0.7), dtype=np.float64))
        if j < depth - 1:
            layers.append(ReLU())
        width = out
    net = Network(layers, dtype=np.float64).init(rng)
    for layer in net.layers:
        if layer.bias is not None:
            layer.bias[...] = rng.normal(scale=0.1, size=layer.bias.shape)
    return net, shape


def test_criterion_3_score_gradient_finite_differences():
    rng = np.random.default_rng(3)
    errs = []
    for trial in range(120):
        n, m = [(2, 4), (1, 4), (2, 8)][trial % 3]
        table = enumerate_combinations(n, m)
        net, shape = random_sparse_net(rng, m)
        views = {i: make_group_view(net.layers[i].weight.shape, m) for i in net.param_layers()}
        states = {}
        for i, view in views.items():
            state = LbcLayerState(view.g, table)
            state.scores = rng.normal(size=state.scores.shape)
            t = int(rng.integers(0, 5))
            remove_candidates(state, table, RemovalSchedule(0, 4, table.c), t)
            states[i] = state
        masks = {i: scatter(views[i], states[i].mask.astype(np.float64)) for i in views}
        x = rng.normal(size=(4, *shape))
        kind = "mse" if trial % 2 else "cross_entropy"
        out = net.forward(x, masks)
        y = rng.normal(size=out.shape) if kind == "mse" else rng.integers(0, out.shape[1], size=4)
        grads = net.backward(loss(kind, out, y)[1])
        i = list(views)[int(rng.integers(0, len(views)))]
        view, state = views[i], states[i]
        analytic = score_gradients(state, table, gather(view, net.layers[i].weight), gather(view, grads[i][0]))
        delta = np.zeros_like(state.scores)
        base = state.mask.astype(np.float64)

        def relaxed():
            relaxed_masks = dict(masks)
            relaxed_masks[i] = scatter(view, base + (delta * state.alive) @ table.member)
            return loss_of(net, x, y, kind, relaxed_masks)

        fd = central_difference(relaxed, delta, 1e-6)
        errs.append(rel_err(analytic, fd))
    worst = max(errs)
    assert record(3, "STE score gradient vs finite differences", worst <= 1e-4,
                  f"{len(errs)} trials, max relative error {worst:.2e} (tol 1e-4)")


# 4 --------------------------------------------------------------------------

def planted_run(seed, groups, epochs=40):
    data = planted_linear(seed=seed, groups=groups, support="random", samples=200)
    net = mlp([4 * groups, 1], dtype=np.float64, bias=False).init(np.random.default_rng(seed), 0.1)
    cfg = SgdConfig(0.05, 0.0, 0.0, 1, epochs)
    res = lbc_train(net, data, cfg, 2, 4, (0, epochs // 2), batch_size=32, seed=seed)
    lbc = assignment_from_state(res.states[0])
    problem = LinearProblem(net.layers[0].weight, data.x_train, data.y_train, 2, 4)
    best, table = exhaustive_best(problem, refit="closed_form_ls")
    return lbc, best, table


def test_criterion_4_oracle_agreement():
    seeds = range(20)
    top10 = sum(rank_of(lbc, table) <= 0.10 for lbc, _, table in (planted_run(s, 2) for s in seeds))
    argmin = sum(lbc == best for lbc, best, _ in (planted_run(s, 1) for s in seeds))
    ok = top10 >= 0.9 * len(seeds) and argmin >= 0.95 * len(seeds)
    assert record(4, "oracle agreement on planted least squares", ok,
                  f"G=2 top-10% in {top10}/20 seeds (need 18), G=1 argmin in {argmin}/20 (need 19)")


# 5 --------------------------------------------------------------------------

def blobs(seed):
    return synthetic_blobs(seed=seed, classes=8, dim=32, samples=6000, separation=3.0, informative=8)


def test_criterion_5_criteria_ordering():
    kwargs = {"cfg": SgdConfig(0.1, 0.0, 5e-4, 5, 40), "n": 2, "m": 4, "sched": (0, 20), "batch_size": 32}
    rows = run_comparison(lambda s: mlp([32, 16, 8]).init(np.random.default_rng(1000 + s)), blobs,
                          ["lbc_score", "magnitude", "lbc_score_inverse", "random"], range(10), kwargs)
    med = median_by_kind(rows)
    s, mag, inv = med["lbc_score"], med["magnitude"], med["lbc_score_inverse"]
    ok = s <= mag and inv > max(s, mag)  # random is reported, not asserted
    detail = ", ".join(f"{k} {v:.4f}" for k, v in med.items())
    assert record(5, "criteria ordering S <= magnitude, S-inverse worst", ok,
                  f"median final val loss over 10 seeds: {detail}")


# 6 --------------------------------------------------------------------------

def test_criterion_6_pack_parity():
    rng = np.random.default_rng(6)
    identity_ok, worst, macs_ok = True, 0.0, True
    for case in range(1000):
        n, m = [(2, 4), (1, 4), (2, 8), (1, 16), (4, 8)][case % 5]
        table = enumerate_combinations(n, m)
        out, gin, batch = (int(v) for v in rng.integers(1, [33, 17, 17]))
        shape = (out, gin * m) if case % 4 else (out, m, 2, 2)
        view = make_group_view(shape, m)
        gmask = table.member[rng.integers(0, table.c, size=view.g)]
        w = scatter(view, np.where(gmask == 1, rng.normal(size=gmask.shape), 0.0)).astype(np.float32)
        mask = scatter(view, gmask.astype(np.uint8))
        p = pack(w, mask, view, n, m)
        dense = unpack(p)
        again = pack(dense, mask, view, n, m)
        identity_ok &= dense.tobytes() == w.tobytes()
        identity_ok &= again.values.tobytes() == p.values.tobytes() and again.indices == p.indices
        x = rng.normal(size=(batch, w[0].size)).astype(np.float32)
        y, macs = spmm(p, x, return_macs=True)
        # conv weights are consumed in im2col column order
        ref = x @ (dense if dense.ndim == 2 else conv_weight_matrix(dense)).T
        worst = max(worst, rel_err(y, ref))
        macs_ok &= macs * m == batch * w.size * n
    ok = identity_ok and worst <= 1e-6 and macs_ok
    assert record(6, "pack/compute parity", ok,
                  f"1000 cases: round trip bit-exact={identity_ok}, max relative error {worst:.2e} "
                  f"(tol 1e-6, 32-bit), MAC count exact={macs_ok}")


# 7 --------------------------------------------------------------------------

def test_criterion_7_flops_trend():
    epochs = 20
    ratios = {}
    for t_f in (epochs // 2, 0):
        data = synthetic_blobs(seed=7, classes=4, dim=32, samples=400, informative=8)
        net = mlp([32, 16, 4]).init(np.random.default_rng(7))
        res = lbc_train(net, data, SgdConfig(0.1, 0.9, 5e-4, 2, epochs), 2, 4, (0, t_f), seed=7)
        ratios[t_f] = train_flops_ratio(res.flops)
    ok = ratios[epochs // 2] > ratios[0] and ratios[0] == 0.5
    assert record(7, "train FLOPs grow with t_f", ok,
                  f"ratio(t_f=E/2)={ratios[epochs // 2]:.6f} > ratio(t_f=0)={ratios[0]!r} (expected exactly 0.5)")


# 8 --------------------------------------------------------------------------

def test_criterion_8_determinism_and_freezing(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "dataset": {"kind": "synthetic-blobs", "classes": 4, "dim": 16, "samples": 400, "informative": 6},
        "arch": {"kind": "mlp", "hidden": [8]}, "epochs": 8, "t_f": 4, "warmup_epochs": 1}))
    codes = [main(["train", str(cfg), "--output-dir", str(tmp_path / d)]) for d in ("a", "b")]
    same_csv = codes == [0, 0] and (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()

    snaps = []

    def on_epoch(epoch, net, masks, states):
        snaps.append({i: (net.layers[i].weight.copy(), masks[i].copy()) for i in masks})

    data = synthetic_blobs(seed=8, classes=4, dim=16, samples=400, informative=6)
    net = mlp([16, 8, 4]).init(np.random.default_rng(8))
    lbc_train(net, data, SgdConfig(0.1, 0.9, 5e-4, 1, 10), 2, 4, (0, 6), on_epoch=on_epoch)
    frozen_checked, thawed = 0, 0
    for t, snap in enumerate(snaps):
        for i, (w, mask) in snap.items():
            off = mask == 0
            for later in snaps[t + 1:]:
                frozen_checked += int(off.sum())
                thawed += int(np.sum(later[i][0][off].view(np.uint32) != w[off].view(np.uint32)))
    ok = same_csv and thawed == 0 and frozen_checked > 0
    assert record(8, "determinism and frozen weights", ok,
                  f"byte-identical metrics CSV={same_csv}, {frozen_checked} frozen (weight, epoch) pairs, "
                  f"{thawed} changed")


# 9 --------------------------------------------------------------------------

def test_criterion_9_numerics_baseline():
    rng = np.random.default_rng(9)
    errs = []
    for trial in range(120):
        net, shape = random_network(rng, depth=int(rng.integers(1, 4)))
        x = rng.normal(size=(3, *shape))
        kind = "mse" if trial % 2 else "cross_entropy"
        out = net.forward(x)
        y = rng.normal(size=out.shape) if kind == "mse" else rng.integers(0, out.shape[1], size=3)
        grads = net.backward(loss(kind, out, y)[1])
        for i, (gw, gb) in grads.items():
            errs.append(rel_err(gw, central_difference(lambda: loss_of(net, x, y, kind), net.layers[i].weight, 1e-6)))
            if gb is not None:
                errs.append(rel_err(gb, central_difference(lambda: loss_of(net, x, y, kind), net.layers[i].bias, 1e-6)))
    lr_ok = all(lr_at(c, 0) == 0.0 and lr_at(c, c.warmup_epochs) == c.base_lr
                for c in (SgdConfig(0.1, 0.9, 5e-4, 5, 120), SgdConfig(0.37, 0.0, 0.0, 3, 17),
                          SgdConfig(1e-3, 0.5, 0.0, 1, 2)))
    lr_ok &= lr_at(SgdConfig(0.1, 0.9, 5e-4, 0, 120), 0) == 0.1
    worst = max(errs)
    assert record(9, "backprop and lr schedule", worst <= 1e-5 and lr_ok,
                  f"120 random nets, {len(errs)} tensors, max relative error {worst:.2e} (tol 1e-5); "
                  f"lr endpoints exact={lr_ok}")


if __name__ == "__main__":
    import sys

    import pytest
    sys.exit(pytest.main([__file__, "-q", "-s"]))
