import csv
import json

import numpy as np
import pytest

from lbcnm.cli import flops_from_events, main, read_events
from lbcnm.config import ConfigError, RunConfig
from lbcnm.nmformat import train_flops_ratio

SMALL = {
    "dataset": {"kind": "synthetic-blobs", "classes": 4, "dim": 16, "samples": 300, "informative": 6},
    "arch": {"kind": "mlp", "hidden": [8], "bias": True},
    "epochs": 6, "t_f": 3, "warmup_epochs": 1,
}


def write_config(tmp_path, **extra):
    raw = dict(SMALL, output_dir=str(tmp_path / "run"), **extra)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return path


@pytest.fixture
def trained(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["train", str(cfg)]) == 0
    return tmp_path / "run"


def test_train_writes_artifacts(trained):
    for name in ("config.json", "checkpoint.lbc", "masks.lbc", "metrics.csv", "events.jsonl"):
        assert (trained / name).exists()
    rows = list(csv.DictReader(open(trained / "metrics.csv")))
    assert list(rows[0]) == ["epoch", "train_loss", "val_loss", "val_accuracy", "density", "flops_ratio", "lr"]
    assert len(rows) == 6
    assert float(rows[-1]["density"]) == 0.5
    dens = [float(r["density"]) for r in rows]
    assert all(a >= b for a, b in zip(dens, dens[1:]))


def test_rerun_is_byte_identical(tmp_path, trained):
    first = (trained / "metrics.csv").read_bytes()
    assert main(["train", str(tmp_path / "cfg.json"), "--output-dir", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "metrics.csv").read_bytes() == first
    assert (tmp_path / "again" / "checkpoint.lbc").read_bytes() == (trained / "checkpoint.lbc").read_bytes()


def test_invalid_config_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["train", str(cfg), "--t-f", "6"]) == 2
    assert "t_f" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"bogus": 1}))
    assert main(["train", str(bad)]) == 2


def test_dump_defaults(capsys):
    assert main(["train", "--dump-defaults"]) == 0
    raw = json.loads(capsys.readouterr().out)
    assert RunConfig.from_dict(raw) == RunConfig()


def test_pack_eval_parity(trained, capsys):
    assert main(["pack", str(trained / "checkpoint.lbc"), "--mask", str(trained / "masks.lbc"),
                 "--out", str(trained / "model.nmpk")]) == 0
    capsys.readouterr()
    assert main(["eval", str(trained / "checkpoint.lbc"), "--mask", str(trained / "masks.lbc")]) == 0
    dense = json.loads(capsys.readouterr().out)
    assert main(["eval", str(trained / "model.nmpk"), "--config", str(trained / "config.json")]) == 0
    packed = json.loads(capsys.readouterr().out)
    assert abs(packed["loss"] - dense["loss"]) <= 1e-6 * abs(dense["loss"])
    assert 0.0 <= packed["accuracy"] <= 1.0


def test_pack_refuses_dense_checkpoint(trained):
    assert main(["pack", str(trained / "checkpoint.lbc"), "--out", str(trained / "x.nmpk")]) == 3


def test_report_matches_density_log(trained, capsys):
    assert main(["report", str(trained)]) == 0
    out = capsys.readouterr().out
    line = next(line for line in out.splitlines() if line.startswith("train_flops_ratio"))
    ratio = train_flops_ratio(flops_from_events(read_events(trained)))
    assert float(line.split()[1]) == pytest.approx(ratio, abs=5e-7)
    rows = list(csv.DictReader(open(trained / "metrics.csv")))
    assert float(rows[-1]["flops_ratio"]) == pytest.approx(ratio, rel=1e-12)


def test_compare_emits_rows(tmp_path, capsys):
    cfg = write_config(tmp_path, epochs=3, t_f=1)
    out = tmp_path / "cmp.csv"
    assert main(["compare", str(cfg), "--kinds", "S,S-inverse", "--seeds", "10", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 20
    assert {r["kind"] for r in rows} == {"lbc_score", "lbc_score_inverse"}


def test_oracle_command(tmp_path, capsys):
    cfg = tmp_path / "oracle.json"
    cfg.write_text(json.dumps({
        "dataset": {"kind": "planted-linear", "groups": 2, "samples": 200, "support": [1, 3]},
        "arch": {"kind": "mlp", "hidden": [], "bias": False},
        "epochs": 30, "t_f": 15, "warmup_epochs": 1, "base_lr": 0.05, "momentum": 0.0,
        "weight_decay": 0.0, "init_scale": 0.1, "precision": 64,
    }))
    table = tmp_path / "table.csv"
    assert main(["oracle", str(cfg), "--table", str(table)]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["rows"] == 36
    assert res["lbc"] == [4, 4]  # {1,3} in both groups
    assert res["percentile"] == 0.0
    assert len(table.read_text().splitlines()) == 37


def test_oracle_rejects_hidden_layers(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["oracle", str(cfg)]) == 2


def test_gen_data(tmp_path, capsys):
    out = tmp_path / "data"
    assert main(["gen-data", "synthetic-blobs", "--seed", "1", "--out", str(out),
                 "--param", "classes=2", "--param", "samples=100"]) == 0
    assert (out / "train-images.idx").read_bytes()[:4] == bytes([0, 0, 0x0E, 2])
    meta = json.loads((out / "meta.json").read_text())
    assert meta["n_train"] == 90 and meta["n_val"] == 10
    # a run can consume the generated files
    cfg = tmp_path / "idx.json"
    cfg.write_text(json.dumps({
        "dataset": {"kind": "idx-images", **{k: str(v) for k, v in meta["files"].items()}},
        "epochs": 3, "t_f": 1, "warmup_epochs": 1, "output_dir": str(tmp_path / "run"),
    }))
    assert main(["train", str(cfg)]) == 0


def test_malformed_idx_exit_code(tmp_path):
    bad = tmp_path / "bad.idx"
    bad.write_bytes(b"\0\0\x08\x01\0\0\0\x05abc")
    cfg = tmp_path / "idx.json"
    cfg.write_text(json.dumps({
        "dataset": {"kind": "idx-images", "train_images": str(bad), "train_labels": str(bad)},
        "epochs": 3, "t_f": 1, "warmup_epochs": 1, "output_dir": str(tmp_path / "run"),
    }))
    assert main(["train", str(cfg)]) == 1


def test_config_builder_leaves_indivisible_layers_dense():
    cfg = RunConfig.from_dict({"dataset": {"kind": "synthetic-blobs", "classes": 3, "dim": 6, "samples": 30},
                               "arch": {"kind": "mlp", "hidden": [8]}, "epochs": 3, "t_f": 1,
                               "warmup_epochs": 1})
    net = cfg.build_network(cfg.build_dataset())
    assert [net.layers[i].sparsifiable for i in net.param_layers()] == [False, True]
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"n": 5, "m": 4})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"precision": 16})
    assert np.dtype(RunConfig(precision=64).dtype) == np.float64
