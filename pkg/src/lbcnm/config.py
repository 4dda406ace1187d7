"""Run configuration: one JSON document fully determines a training run."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .combinatorics import MAX_M, enumerate_combinations
from .core import RemovalSchedule
from .criteria import Criterion
from .data import load_dataset
from .numerics import SgdConfig, mlp, small_conv


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    arch: dict = field(default_factory=lambda: {"kind": "mlp", "hidden": [16], "bias": True})
    dataset: dict = field(default_factory=lambda: {
        "kind": "synthetic-blobs", "classes": 8, "dim": 32, "samples": 3000,
        "separation": 3.0, "informative": 8})
    n: int = 2
    m: int = 4
    epochs: int = 40
    t_i: int = 0
    t_f: int = 20
    base_lr: float = 0.1
    score_lr: float | None = None
    score_schedule: bool = True
    momentum: float = 0.9
    weight_decay: float = 0.0005
    warmup_epochs: int = 5
    batch_size: int = 32
    criterion: str = "lbc_score"
    seed: int = 0
    init_scale: float = 1.0
    exempt_layers: list = field(default_factory=list)
    precision: int = 32
    output_dir: str = "runs/default"

    @classmethod
    def from_dict(cls, raw):
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw)

    def to_dict(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def validate(self):
        if not 1 <= self.n <= self.m <= MAX_M:
            raise ConfigError(f"need 1 <= n <= m <= {MAX_M}, got {self.n}:{self.m}")
        if not 0 <= self.t_i <= self.t_f < self.epochs:
            raise ConfigError(f"need 0 <= t_i <= t_f < epochs, got t_i={self.t_i}, t_f={self.t_f}, "
                              f"epochs={self.epochs}")
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        try:
            self.sgd()
            Criterion.parse(self.criterion)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.arch.get("kind") not in ("mlp", "smallconv"):
            raise ConfigError(f"unknown arch kind {self.arch.get('kind')!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64

    def sgd(self):
        return SgdConfig(self.base_lr, self.momentum, self.weight_decay, self.warmup_epochs, self.epochs)

    def schedule(self, c):
        return RemovalSchedule(self.t_i, self.t_f, c)

    def build_dataset(self, seed=None):
        flatten = self.arch.get("kind") == "mlp"
        data = load_dataset(self.dataset, seed=self.seed if seed is None else seed, flatten=flatten)
        return data.astype(self.dtype)

    def build_network(self, data, seed=None):
        """Fresh network sized to ``data``; layers whose input width is not divisible by ``m`` are left dense."""
        rng = np.random.default_rng(self.seed if seed is None else seed)
        arch = dict(self.arch)
        if arch["kind"] == "mlp":
            widths = [int(np.prod(data.input_shape)), *arch.get("hidden", []), data.num_outputs]
            net = mlp(widths, dtype=self.dtype, bias=arch.get("bias", True))
        else:
            c, h, w = data.input_shape
            if h != w:
                raise ConfigError(f"smallconv expects square images, got {h}x{w}")
            net = small_conv(c, h, arch.get("channels", [8]), data.num_outputs,
                             kernel_size=arch.get("kernel_size", 3), dtype=self.dtype)
        for layer in net.layers:
            if layer.weight is not None and layer.weight.shape[1] % self.m:
                layer.sparsifiable = False
        return net.init(rng, self.init_scale)

    def train_kwargs(self):
        table = enumerate_combinations(self.n, self.m)
        return {
            "cfg": self.sgd(), "n": self.n, "m": self.m, "sched": self.schedule(table.c),
            "batch_size": self.batch_size, "score_lr": self.score_lr,
            "score_schedule": self.score_schedule, "exempt": tuple(self.exempt_layers),
        }
