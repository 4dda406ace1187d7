"""Joint training of weights and combination scores, plus the criteria comparison harness."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field

import numpy as np

from .combinatorics import enumerate_combinations
from .core import LbcLayerState, RemovalSchedule, remove_candidates, score_gradients, update_scores
from .criteria import Criterion, combo_score
from .grouping import gather, make_group_view, scatter
from .nmformat import FlopsModel, layer_macs, train_flops_ratio
from .numerics import Sgd, loss, lr_at

METRICS_COLUMNS = ("epoch", "train_loss", "val_loss", "val_accuracy", "density", "flops_ratio", "lr")


class ConstraintViolation(RuntimeError):
    pass


@dataclass
class TrainResult:
    net: object
    masks: dict
    states: dict
    views: dict
    metrics: list = field(default_factory=list)
    events: list = field(default_factory=list)
    flops: FlopsModel | None = None

    @property
    def final(self):
        return self.metrics[-1]


def group_views(net, m, exempt=()):
    """Group views for every sparsifiable, non-exempt layer (keyed by layer index)."""
    views = {}
    for i in net.sparsifiable_layers():
        if i in exempt:
            continue
        layer = net.layers[i]
        views[i] = make_group_view(layer.weight.shape, m, layer.kind, layer_id=i)
    return views


def evaluate(net, x, y, loss_kind, masks=None, batch_size=1024):
    """Mean loss and accuracy (NaN for regression) over a dataset."""
    total, correct = 0.0, 0
    for s in range(0, len(x), batch_size):
        xb, yb = x[s:s + batch_size], y[s:s + batch_size]
        out = net.forward(xb, masks)
        value, _ = loss(loss_kind, out, yb)
        total += value * len(xb)
        if loss_kind == "cross_entropy":
            correct += int(np.sum(out.argmax(axis=1) == yb))
    acc = correct / len(x) if loss_kind == "cross_entropy" else float("nan")
    return total / len(x), acc


def check_terminal(result, n):
    for i, state in result.states.items():
        rows = state.mask.sum(axis=1)
        if not np.all(rows == n):
            bad = int(np.flatnonzero(rows != n)[0])
            raise ConstraintViolation(f"layer {i} group {bad} keeps {rows[bad]} weights, expected {n}")


def _score_summary(state):
    live = state.scores[state.alive]
    return {"min": float(live.min()), "max": float(live.max()),
            "mean": float(live.mean()), "std": float(live.std())}


def lbc_train(net, data, cfg, n, m, sched, *, criterion=None, batch_size=32, seed=0,
              score_lr=None, score_schedule=True, exempt=(), loss_kind=None, on_epoch=None):
    """Train ``net`` under a gradually tightening N:M constraint.

    Every epoch inside ``[t_i, t_f]`` first drops candidates per group down
    to the schedule's count (ranked by ``criterion``, the learned scores by
    default) and rebuilds the masks. Each iteration then runs the masked
    forward pass, backprop, a masked SGD step on the weights and a plain SGD
    step on the alive scores. ``sched`` may be a :class:`RemovalSchedule` or
    a ``(t_i, t_f)`` pair.
    """
    criterion = criterion or Criterion()
    if isinstance(criterion, str):
        criterion = Criterion.parse(criterion)
    table = enumerate_combinations(n, m)
    if not isinstance(sched, RemovalSchedule):
        sched = RemovalSchedule(sched[0], sched[1], table.c)
    if sched.c != table.c:
        raise ValueError(f"schedule collection size {sched.c} != C({m},{n}) = {table.c}")
    sched.validate(cfg.total_epochs)
    loss_kind = loss_kind or data.loss_kind
    score_lr = cfg.base_lr if score_lr is None else score_lr
    dtype = net.dtype

    views = group_views(net, m, exempt)
    states = {i: LbcLayerState(v.g, table) for i, v in views.items()}
    masks = {i: scatter(views[i], states[i].mask.astype(dtype)) for i in views}
    taylor = {i: np.zeros((v.g, m)) for i, v in views.items()}
    macs = layer_macs(net, data.input_shape)
    fwd = np.array([macs[i] for i in views], dtype=np.float64)
    densities = []

    rng = np.random.default_rng(seed)
    crit_rng = np.random.default_rng(criterion.seed)
    opt = Sgd(cfg)
    x_train, y_train = data.x_train.astype(dtype), data.y_train
    x_val, y_val = data.x_val.astype(dtype), data.y_val
    if data.task != "classification":
        y_train, y_val = y_train.astype(dtype), y_val.astype(dtype)
    iters = max(1, -(-len(x_train) // batch_size))
    result = TrainResult(net, masks, states, views)

    for epoch in range(cfg.total_epochs):
        if sched.t_i <= epoch <= sched.t_f and any(s.alive_counts().max() > 1 for s in states.values()):
            for i, state in states.items():
                ranking = combo_score(criterion, table, gather(views[i], net.layers[i].weight),
                                      running_taylor=taylor[i], scores=state.scores, rng=crit_rng)
                remove_candidates(state, table, sched, epoch, ranking=ranking)
                masks[i] = scatter(views[i], state.mask.astype(dtype))
        layer_density = [float(states[i].mask.mean()) for i in views]
        densities.append(layer_density)

        perm = rng.permutation(len(x_train))
        running = 0.0
        for it in range(iters):
            idx = perm[it * batch_size:(it + 1) * batch_size]
            out = net.forward(x_train[idx], masks)
            value, grad = loss(loss_kind, out, y_train[idx])
            running += value * len(idx)
            grads = net.backward(grad)
            lr = lr_at(cfg, epoch + it / iters)
            slr = score_lr * (lr / cfg.base_lr if score_schedule else 1.0)
            score_grads = {}
            for i, view in views.items():
                w = gather(view, net.layers[i].weight)
                gw = gather(view, grads[i][0])
                score_grads[i] = score_gradients(states[i], table, w, gw)
                if epoch >= sched.t_i:
                    taylor[i] += np.abs(w.astype(np.float64) * gw)
            opt.step(net, grads, lr, masks)
            for i, g in score_grads.items():
                update_scores(states[i], g, slr)

        val_loss, val_acc = evaluate(net, x_val, y_val, loss_kind, masks)
        flops = FlopsModel(fwd, np.array(densities))
        total_w = sum(views[i].size for i in views)
        density = sum(states[i].mask.sum() for i in views) / total_w if total_w else 1.0
        row = {
            "epoch": epoch,
            "train_loss": running / len(x_train),
            "val_loss": val_loss,
            "val_accuracy": val_acc,
            "density": float(density),
            "flops_ratio": train_flops_ratio(flops) if len(views) else 1.0,
            "lr": lr_at(cfg, epoch),
        }
        result.metrics.append(row)
        result.events.append({
            "epoch": epoch,
            "criterion": str(criterion),
            "alive": {str(i): {"min": int(s.alive_counts().min()), "max": int(s.alive_counts().max())}
                      for i, s in states.items()},
            "removed": {str(i): int(s.removed_cum.max()) for i, s in states.items()},
            "density": row["density"],
            "layer_density": {str(i): d for i, d in zip(views, layer_density)},
            "layer_macs": {str(i): int(macs[i]) for i in views},
            "scores": {str(i): _score_summary(s) for i, s in states.items()},
            "train_loss": row["train_loss"],
            "val_loss": val_loss,
            "val_accuracy": val_acc,
            "lr": row["lr"],
        })
        if on_epoch is not None:
            on_epoch(epoch, net, masks, states)

    result.flops = FlopsModel(fwd, np.array(densities))
    if cfg.total_epochs > sched.t_f:
        check_terminal(result, n)
    return result


def run_comparison(net_factory, data, kinds, seeds, train_kwargs):
    """Train once per ``(kind, seed)`` with identical per-seed initialisation.

    ``net_factory(seed)`` must return a freshly initialised network and
    ``data`` is a dataset or ``seed -> dataset`` callable. ``train_kwargs``
    carries ``cfg``, ``n``, ``m``, ``sched`` and optional extras.
    """
    rows = []
    for kind in kinds:
        crit = kind if isinstance(kind, Criterion) else Criterion.parse(kind)
        for seed in seeds:
            ds = data(seed) if callable(data) else data
            if crit.kind == "random":
                crit = Criterion("random", seed)
            res = lbc_train(net_factory(seed), ds, criterion=crit, seed=seed, **train_kwargs)
            final = res.final
            rows.append({
                "kind": crit.kind,
                "seed": seed,
                "final_train_loss": final["train_loss"],
                "final_val_loss": final["val_loss"],
                "val_accuracy": final["val_accuracy"],
                "epochs": train_kwargs["cfg"].total_epochs,
            })
    return rows


def median_by_kind(rows, column="final_val_loss"):
    kinds = dict.fromkeys(r["kind"] for r in rows)
    return {k: statistics.median(r[column] for r in rows if r["kind"] == k) for k in kinds}
