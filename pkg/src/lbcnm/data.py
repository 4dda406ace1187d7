"""Datasets: seeded synthetic generators and an IDX file reader/writer."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_TYPES = {
    0x08: np.dtype("u1"),
    0x09: np.dtype("i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
IDX_CODES = {dt.newbyteorder("=").str[1:]: code for code, dt in IDX_TYPES.items()}


class IdxFormatError(ValueError):
    def __init__(self, offset, message):
        super().__init__(f"malformed IDX data at byte offset {offset}: {message}")
        self.offset = offset


def parse_idx(buf):
    buf = bytes(buf)
    if len(buf) < 4:
        raise IdxFormatError(len(buf), "truncated magic number")
    if buf[0] != 0 or buf[1] != 0:
        raise IdxFormatError(0, f"magic must start with two zero bytes, got {buf[:2].hex()}")
    code, ndim = buf[2], buf[3]
    if code not in IDX_TYPES:
        raise IdxFormatError(2, f"unknown element type 0x{code:02x}")
    end = 4 + 4 * ndim
    if len(buf) < end:
        raise IdxFormatError(len(buf), f"truncated dimension list ({ndim} dims expected)")
    dims = struct.unpack(f">{ndim}I", buf[4:end])
    dtype = IDX_TYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buf) - end != expected:
        raise IdxFormatError(end, f"payload has {len(buf) - end} bytes, header implies {expected}")
    arr = np.frombuffer(buf, dtype=dtype, offset=end).reshape(dims)
    return arr.astype(dtype.newbyteorder("="))


def read_idx(path):
    return parse_idx(Path(path).read_bytes())


def write_idx(path, arr):
    arr = np.asarray(arr)
    key = arr.dtype.newbyteorder("=").str[1:]
    if key not in IDX_CODES:
        raise TypeError(f"dtype {arr.dtype} has no IDX encoding")
    code = IDX_CODES[key]
    header = bytes([0, 0, code, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.astype(IDX_TYPES[code]).tobytes())


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    task: str = "classification"
    meta: dict = field(default_factory=dict)

    @property
    def loss_kind(self):
        return "cross_entropy" if self.task == "classification" else "mse"

    @property
    def input_shape(self):
        return self.x_train.shape[1:]

    @property
    def num_outputs(self):
        if self.task == "classification":
            return int(self.meta.get("classes", int(self.y_train.max()) + 1))
        return self.y_train.shape[1]

    def astype(self, dtype):
        return Dataset(self.x_train.astype(dtype), self._y(self.y_train, dtype),
                       self.x_val.astype(dtype), self._y(self.y_val, dtype), self.task, self.meta)

    def _y(self, y, dtype):
        return y if self.task == "classification" else y.astype(dtype)


def split_tail(x, y, val_fraction=0.1):
    """The last ``val_fraction`` of the rows become the validation split."""
    n_val = max(1, int(round(len(x) * val_fraction)))
    return x[:-n_val], y[:-n_val], x[-n_val:], y[-n_val:]


def synthetic_blobs(seed=0, classes=2, dim=16, samples=600, spread=1.0, separation=4.0,
                    informative=None, val_fraction=0.1):
    """Gaussian clusters, one per class, shuffled.

    When ``informative`` is given, only that many randomly chosen input
    dimensions carry class signal; the rest are pure noise.
    """
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, separation / 2, size=(classes, dim))
    signal_dims = np.arange(dim)
    if informative is not None:
        signal_dims = np.sort(rng.choice(dim, size=informative, replace=False))
        noise = np.setdiff1d(np.arange(dim), signal_dims)
        centers[:, noise] = 0.0
    labels = np.arange(samples) % classes
    rng.shuffle(labels)
    x = centers[labels] + rng.normal(0.0, spread, size=(samples, dim))
    data = Dataset(*split_tail(x, labels.astype(np.int64), val_fraction), task="classification")
    data.meta = {"kind": "synthetic-blobs", "seed": seed, "classes": classes, "dim": dim,
                 "samples": samples, "signal_dims": signal_dims.tolist(), "val_fraction": val_fraction}
    return data


def planted_linear(seed=0, n=2, m=4, groups=2, outputs=1, samples=200, noise=0.0,
                   support=(1, 3), val_fraction=0.1):
    """Least-squares data whose generator uses exactly ``n`` slots per group.

    ``support`` is the slot subset used by every group, or ``"random"`` for an
    independent random subset per group and output row.
    """
    rng = np.random.default_rng(seed)
    dim = groups * m
    x = rng.normal(size=(samples, dim))
    w = np.zeros((outputs, groups, m))
    supports = np.zeros((outputs, groups, n), dtype=np.int64)
    for o in range(outputs):
        for g in range(groups):
            if support == "random":
                s = np.sort(rng.choice(m, size=n, replace=False))
            else:
                s = np.asarray(sorted(support), dtype=np.int64)
                if len(s) != n or s.max() >= m:
                    raise ValueError(f"support {support} is not an {n}-subset of range({m})")
            supports[o, g] = s
            w[o, g, s] = rng.choice([-1.0, 1.0], size=n) * rng.uniform(1.0, 2.0, size=n)
    w = w.reshape(outputs, dim)
    y = x @ w.T + noise * rng.normal(size=(samples, outputs))
    data = Dataset(*split_tail(x, y, val_fraction), task="regression")
    data.meta = {"kind": "planted-linear", "seed": seed, "n": n, "m": m, "groups": groups,
                 "outputs": outputs, "weights": w.tolist(), "support": supports.tolist(),
                 "val_fraction": val_fraction}
    return data


def idx_images(train_images, train_labels, val_images=None, val_labels=None, val_fraction=0.1,
               flatten=False, task="classification"):
    """Load IDX files; unsigned-byte images are scaled to [0, 1] and get a channel axis."""
    def prep(path):
        x = read_idx(path)
        if x.dtype == np.uint8:
            x = x.astype(np.float64) / 255.0
        else:
            x = x.astype(np.float64)
        if x.ndim == 3:
            x = x[:, None]
        if flatten:
            x = x.reshape(len(x), -1)
        return x

    def labels(path):
        y = read_idx(path)
        return y.astype(np.int64) if task == "classification" else y.astype(np.float64)

    x, y = prep(train_images), labels(train_labels)
    if len(x) != len(y):
        raise ValueError(f"{len(x)} images but {len(y)} labels")
    if val_images is not None:
        parts = (x, y, prep(val_images), labels(val_labels))
    else:
        parts = split_tail(x, y, val_fraction)
    meta = {"kind": "idx-images", "train_images": str(train_images)}
    if task == "classification":
        meta["classes"] = int(max(parts[1].max(), parts[3].max())) + 1
    return Dataset(*parts, task=task, meta=meta)


def load_dataset(spec, seed=0, flatten=False):
    """Build a dataset from a config mapping with a ``kind`` key."""
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "synthetic-blobs":
        return synthetic_blobs(seed=spec.pop("seed", seed), **spec)
    if kind == "planted-linear":
        if isinstance(spec.get("support"), list):
            spec["support"] = tuple(spec["support"])
        return planted_linear(seed=spec.pop("seed", seed), **spec)
    if kind == "idx-images":
        return idx_images(flatten=spec.pop("flatten", flatten), **spec)
    raise ValueError(f"unknown dataset kind {kind!r}")


def gen_dataset(kind, seed, out_dir, **sizes):
    """Generate a dataset and write it as IDX files plus ``meta.json``.

    The files can be loaded back with ``{"kind": "idx-images", ...}``.
    """
    data = load_dataset({"kind": kind, **sizes}, seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ytype = np.uint8 if data.task == "classification" and data.num_outputs <= 256 else None
    files = {
        "train_images": data.x_train, "train_labels": data.y_train,
        "val_images": data.x_val, "val_labels": data.y_val,
    }
    paths = {}
    for name, arr in files.items():
        if name.endswith("labels") and ytype is not None:
            arr = arr.astype(ytype)
        elif name.endswith("labels") and data.task == "classification":
            arr = arr.astype(np.int32)
        path = out / f"{name.replace('_', '-')}.idx"
        write_idx(path, arr)
        paths[name] = str(path)
    meta = dict(data.meta)
    meta.update({"task": data.task, "files": paths, "n_train": len(data.x_train), "n_val": len(data.x_val)})
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return paths
