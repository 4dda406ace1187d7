"""Command line entry point: ``lbcnm {train,eval,pack,oracle,compare,report,gen-data}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .checkpoint import FormatError, load_checkpoint, load_masks, save_checkpoint, save_masks
from .config import ConfigError, RunConfig
from .criteria import Criterion
from .data import IdxFormatError, gen_dataset
from .nmformat import FlopsModel, PackedNetwork, PackError, load_packed, save_packed, train_flops_ratio
from .numerics import loss
from .oracle import LinearProblem, OracleBudgetError, assignment_from_state, exhaustive_best, rank_of
from .train import METRICS_COLUMNS, ConstraintViolation, evaluate, lbc_train, median_by_kind, run_comparison

EXIT_CONFIG, EXIT_CONSTRAINT = 2, 3
COMPARE_COLUMNS = ("kind", "seed", "final_train_loss", "final_val_loss", "val_accuracy", "epochs")


def _fmt(value):
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def write_csv(path_or_file, columns, rows):
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(columns)
    for row in rows:
        out.writerow([_fmt(row[c]) for c in columns])
    if hasattr(path_or_file, "write"):
        path_or_file.write(buf.getvalue())
    else:
        Path(path_or_file).write_text(buf.getvalue())


# -- config handling ----------------------------------------------------------

SCALAR_KEYS = [f for f in fields(RunConfig) if f.name not in ("arch", "dataset", "exempt_layers")]


def add_config_flags(p):
    p.add_argument("config", nargs="?", help="JSON run config (defaults apply to missing keys)")
    for f in SCALAR_KEYS:
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            p.add_argument(flag, dest=f.name, type=lambda s: s.lower() in ("1", "true", "yes"), default=None)
        else:
            conv = {"int": int, "float": float, "str": str}.get(str(f.type), None)
            p.add_argument(flag, dest=f.name, type=conv or _number_or_none, default=None)
    p.add_argument("--exempt-layers", dest="exempt_layers", default=None,
                   help="comma-separated layer indices kept dense")


def _number_or_none(text):
    return None if text.lower() == "none" else float(text)


def resolve_config(args):
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    for f in SCALAR_KEYS:
        value = getattr(args, f.name, None)
        if value is not None:
            raw[f.name] = value
    if getattr(args, "exempt_layers", None):
        raw["exempt_layers"] = [int(v) for v in args.exempt_layers.split(",") if v]
    return RunConfig.from_dict(raw)


def train_run(cfg, criterion=None, seed=None):
    seed = cfg.seed if seed is None else seed
    data = cfg.build_dataset(seed)
    net = cfg.build_network(data, seed)
    crit = Criterion.parse(criterion or cfg.criterion, seed=seed)
    return lbc_train(net, data, criterion=crit, seed=seed, **cfg.train_kwargs()), data


# -- commands -----------------------------------------------------------------

def cmd_train(args):
    if args.dump_defaults:
        sys.stdout.write(RunConfig().dumps())
        return 0
    cfg = resolve_config(args)
    result, _ = train_run(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.dumps())
    save_checkpoint(out / "checkpoint.lbc", result.net)
    save_masks(out / "masks.lbc", result.net, {i: m.astype(np.uint8) for i, m in result.masks.items()})
    write_csv(out / "metrics.csv", METRICS_COLUMNS, result.metrics)
    with open(out / "events.jsonl", "w") as fh:
        for event in result.events:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
    final = result.final
    print(f"trained {cfg.n}:{cfg.m} for {cfg.epochs} epochs: density={final['density']:.4f} "
          f"val_loss={final['val_loss']:.4f} val_accuracy={final['val_accuracy']:.4f} "
          f"train_flops_ratio={final['flops_ratio']:.4f} -> {out}")
    return 0


def _run_config_near(path):
    cfg_path = Path(path).parent / "config.json"
    return RunConfig.load(cfg_path) if cfg_path.exists() else None


def cmd_pack(args):
    net = load_checkpoint(args.checkpoint)
    if args.mask:
        masks = load_masks(args.mask)
    else:
        masks = {i: np.ones(net.layers[i].weight.shape, np.uint8) for i in net.sparsifiable_layers()}
    if args.nm:
        n, m = (int(v) for v in args.nm.split(":"))
    else:
        cfg = _run_config_near(args.checkpoint)
        if cfg is None:
            raise ConfigError("pass --nm N:M or keep config.json next to the checkpoint")
        n, m = cfg.n, cfg.m
    pnet = PackedNetwork.from_network(net, masks, n, m)
    save_packed(args.out, pnet)
    kept = sum(len(p.values) for _, p in pnet.layers if p is not None)
    print(f"packed {kept} kept weights ({n}:{m}) -> {args.out}")
    return 0


def load_model(path, mask_path=None):
    """``(forward callable, dtype)`` for a checkpoint (optionally masked) or a packed file."""
    head = Path(path).read_bytes()[:4]
    if head == b"NMPK":
        pnet = load_packed(path)
        dtype = next(layer.weight.dtype for layer, _ in pnet.layers if layer.weight is not None)
        return pnet.forward, dtype
    net = load_checkpoint(path)
    masks = load_masks(mask_path) if mask_path else None
    return (lambda x: net.forward(x, masks)), net.dtype


def eval_model(forward, dtype, data, split="val"):
    x, y = (data.x_val, data.y_val) if split == "val" else (data.x_train, data.y_train)
    out = forward(x.astype(dtype))
    value, _ = loss(data.loss_kind, out, y.astype(dtype) if data.task != "classification" else y)
    acc = float(np.mean(out.argmax(axis=1) == y)) if data.task == "classification" else float("nan")
    return value, acc


def cmd_eval(args):
    cfg = RunConfig.load(args.config) if args.config else _run_config_near(args.model)
    if cfg is None:
        raise ConfigError("pass --config so the dataset can be rebuilt")
    data = cfg.build_dataset()
    forward, dtype = load_model(args.model, args.mask)
    value, acc = eval_model(forward, dtype, data, args.split)
    print(json.dumps({"model": str(args.model), "split": args.split, "loss": value, "accuracy": acc}))
    return 0


def cmd_oracle(args):
    cfg = resolve_config(args)
    if cfg.dataset.get("kind") != "planted-linear" or cfg.arch.get("hidden"):
        raise ConfigError("oracle needs a planted-linear dataset and a single linear layer (hidden: [])")
    result, data = train_run(cfg)
    layer = result.net.layers[0]
    lbc = assignment_from_state(result.states[0])
    refit = args.refit if args.refit in ("none", "closed_form_ls") else int(args.refit)
    problem = LinearProblem(layer.weight, data.x_train, data.y_train, cfg.n, cfg.m)
    best, table = exhaustive_best(problem, refit=refit)
    pct = rank_of(lbc, table)
    if args.table:
        table.to_csv(args.table, problem.table)
    print(json.dumps({"rows": len(table), "oracle_best": list(best), "lbc": list(lbc),
                      "lbc_loss": table.loss_of(lbc), "best_loss": float(table.losses[0]),
                      "percentile": pct}))
    return 0


def _compare_cell(job):
    raw, kind, seed = job
    cfg = RunConfig.from_dict(raw)
    result, _ = train_run(cfg, criterion=kind, seed=seed)
    final = result.final
    return {"kind": Criterion.parse(kind, seed).kind, "seed": seed, "final_train_loss": final["train_loss"],
            "final_val_loss": final["val_loss"], "val_accuracy": final["val_accuracy"], "epochs": cfg.epochs}


def cmd_compare(args):
    cfg = resolve_config(args)
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    seeds = list(range(args.seeds)) if args.seeds_list is None else [int(s) for s in args.seeds_list.split(",")]
    jobs = [(cfg.to_dict(), k, s) for k in kinds for s in seeds]
    if args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_compare_cell, jobs))
    else:
        rows = [_compare_cell(j) for j in jobs]
    write_csv(args.out if args.out else sys.stdout, COMPARE_COLUMNS, rows)
    for kind, med in median_by_kind(rows).items():
        print(f"median final_val_loss {kind}: {med:.6f}", file=sys.stderr)
    return 0


def read_events(run_dir):
    with open(Path(run_dir) / "events.jsonl") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def flops_from_events(events):
    layers = sorted(events[0]["layer_macs"], key=int)
    fwd = np.array([events[0]["layer_macs"][k] for k in layers], dtype=np.float64)
    dens = np.array([[e["layer_density"][k] for k in layers] for e in events])
    return FlopsModel(fwd, dens)


def cmd_report(args):
    run = Path(args.run_dir)
    events = read_events(run)
    model = flops_from_events(events)
    ratio = train_flops_ratio(model)
    print(f"{'epoch':>5} {'density':>8} {'alive':>10} {'val_loss':>10} {'val_acc':>8} {'lr':>8}")
    for e in events:
        alive = ",".join(f"{v['max']}" for _, v in sorted(e["alive"].items(), key=lambda kv: int(kv[0])))
        print(f"{e['epoch']:>5} {e['density']:>8.4f} {alive:>10} {e['val_loss']:>10.4f} "
              f"{e['val_accuracy']:>8.4f} {e['lr']:>8.4f}")
    last = events[-1]
    print(f"train_flops_ratio {ratio:.6f}")
    print(f"final_density {last['density']:.6f}")
    print(f"final_val_loss {last['val_loss']:.6f}")
    print(f"final_val_accuracy {last['val_accuracy']:.6f}")
    return 0


def cmd_gen_data(args):
    params = {}
    for item in args.param:
        key, _, value = item.partition("=")
        params[key.replace("-", "_")] = json.loads(value)
    paths = gen_dataset(args.kind, args.seed, args.out, **params)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="lbcnm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network under the N:M schedule")
    add_config_flags(p)
    p.add_argument("--dump-defaults", action="store_true", help="print the default config and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or packed file")
    p.add_argument("model")
    p.add_argument("--mask")
    p.add_argument("--config")
    p.add_argument("--split", choices=("val", "train"), default="val")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pack", help="pack a masked checkpoint into the NMPK format")
    p.add_argument("checkpoint")
    p.add_argument("--mask")
    p.add_argument("--out", required=True)
    p.add_argument("--nm", help="pattern as N:M (default: from config.json next to the checkpoint)")
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("oracle", help="rank the trained selection against exhaustive search")
    add_config_flags(p)
    p.add_argument("--refit", default="closed_form_ls", help="none | closed_form_ls | <gradient steps>")
    p.add_argument("--table", help="write the full loss table as CSV")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("compare", help="compare candidate-ranking criteria over seeds")
    add_config_flags(p)
    p.add_argument("--kinds", default="lbc_score,magnitude,lbc_score_inverse")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--seeds-list", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="summarise a finished run")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gen-data", help="write a synthetic dataset as IDX files")
    p.add_argument("kind", choices=("synthetic-blobs", "planted-linear"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--param", action="append", default=[], help="generator keyword as key=JSON")
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConstraintViolation, PackError) as exc:
        print(f"constraint violation: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT
    except (OracleBudgetError, FormatError, IdxFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
