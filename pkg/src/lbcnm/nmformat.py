"""Packed N:M weight storage, a skip-zero mat-mul over it, and training FLOPs accounting."""

from __future__ import annotations

import copy
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grouping import gather, make_group_view, scatter
from .checkpoint import (CODE_DTYPES, FLOAT_CODES, NONE, FormatError, _read, build_layer, read_floats,
                         read_layer_header, read_u, write_layer_header)
from .numerics import Network, im2col


class PackError(ValueError):
    pass


def index_width(m):
    return max(1, math.ceil(math.log2(m)))


def pack_indices(slots, m):
    """Bit-pack slot indices, ``index_width(m)`` bits each, least significant bit first."""
    w = index_width(m)
    slots = np.asarray(slots, dtype=np.uint64).reshape(-1)
    bits = (slots[:, None] >> np.arange(w, dtype=np.uint64)) & 1
    return np.packbits(bits.astype(np.uint8).reshape(-1), bitorder="little").tobytes()


def unpack_indices(payload, count, m):
    w = index_width(m)
    raw = np.frombuffer(payload, dtype=np.uint8)
    if len(raw) != -(-count * w // 8):
        raise PackError(f"index payload has {len(raw)} bytes, expected {-(-count * w // 8)}")
    bits = np.unpackbits(raw, count=count * w, bitorder="little").reshape(count, w).astype(np.int64)
    return bits @ (1 << np.arange(w, dtype=np.int64))


@dataclass
class PackedNm:
    n: int
    m: int
    shape: tuple
    layout: str
    values: np.ndarray  # kept weights in group order
    indices: bytes  # bit-packed intra-group slots

    @property
    def groups(self):
        return len(self.values) // self.n

    def slots(self):
        return unpack_indices(self.indices, len(self.values), self.m).reshape(-1, self.n)

    def nbytes(self):
        return self.values.nbytes + len(self.indices)


def pack(weights, mask, view, n, m):
    """Keep only the mask-1 weights of every group; each group must keep exactly ``n``."""
    if view.m != m:
        raise PackError(f"view has group width {view.m}, expected {m}")
    weights = np.asarray(weights)
    mask = np.asarray(mask)
    gmask = gather(view, mask) if mask.shape == view.shape else mask
    if gmask.shape != (view.g, m):
        raise PackError(f"mask shape {mask.shape} fits neither the weights nor the group view")
    keep = gmask.astype(bool)
    rows = keep.sum(axis=1)
    if np.any(rows != n):
        g = int(np.flatnonzero(rows != n)[0])
        raise PackError(f"group {g} keeps {rows[g]} weights, N:M constraint requires {n}")
    values = gather(view, weights)[keep].copy()
    slots = np.nonzero(keep)[1]
    layout = "linear" if len(view.shape) == 2 else "conv2d"
    return PackedNm(n, m, tuple(view.shape), layout, values, pack_indices(slots, m))


def unpack(packed):
    view = make_group_view(packed.shape, packed.m, packed.layout)
    slots = packed.slots()
    if len(slots) != view.g:
        raise PackError(f"{len(slots)} packed groups, layer has {view.g}")
    if slots.size and (slots.max() >= packed.m or np.any(np.diff(slots, axis=1) <= 0)):
        raise PackError("intra-group indices must be strictly increasing and below m")
    groups = np.zeros((view.g, packed.m), dtype=packed.values.dtype)
    np.put_along_axis(groups, slots, packed.values.reshape(-1, packed.n), axis=1)
    return scatter(view, groups)


def unpack_mask(packed):
    view = make_group_view(packed.shape, packed.m, packed.layout)
    groups = np.zeros((view.g, packed.m), dtype=np.uint8)
    np.put_along_axis(groups, packed.slots(), 1, axis=1)
    return scatter(view, groups)


def _columns(packed):
    """Kept-value column indices and values laid out as ``(out, kept per row)``."""
    out = packed.shape[0]
    per_row = int(np.prod(packed.shape[1:]))
    gpr = per_row // packed.m
    slots = packed.slots().reshape(out, gpr, packed.n)
    cols = slots + (np.arange(gpr) * packed.m)[None, :, None]
    return cols.reshape(out, -1), packed.values.reshape(out, -1)


def spmm(packed, x, return_macs=False):
    """``x @ unpack(packed).T`` touching kept weights only.

    ``x`` is ``(batch, in)`` for linear weights, or an im2col patch matrix for
    conv weights. Accumulation runs over kept values of a row in increasing
    column order.
    """
    out = packed.shape[0]
    width = int(np.prod(packed.shape[1:]))
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != width:
        raise ValueError(f"input shape {x.shape} does not compose with packed weight {packed.shape}")
    cols, vals = _columns(packed)
    y = np.zeros((x.shape[0], out), dtype=np.result_type(x.dtype, vals.dtype))
    for k in range(cols.shape[1]):
        y += x[:, cols[:, k]] * vals[:, k]
    if return_macs:
        return y, x.shape[0] * cols.size
    return y


# -- packed networks ----------------------------------------------------------

MAGIC = b"NMPK"
VERSION = 1
PACKED, HAS_BIAS = 2, 1


class PackedNetwork:
    """Inference-only network whose sparsified layers run through :func:`spmm`."""

    def __init__(self, n, m, layers):
        self.n = n
        self.m = m
        self.layers = layers  # list of (layer, PackedNm or None)

    @classmethod
    def from_network(cls, net, masks, n, m):
        layers = []
        for i, layer in enumerate(net.layers):
            p = None
            if i in masks:
                view = make_group_view(layer.weight.shape, m, layer.kind, layer_id=i)
                try:
                    p = pack(layer.weight, masks[i], view, n, m)
                except PackError as exc:
                    raise PackError(f"layer {i}: {exc}") from None
            layers.append((layer, p))
        return cls(n, m, layers)

    def forward(self, x):
        x = np.asarray(x)
        for layer, p in self.layers:
            if p is None:
                x = layer.forward(x, layer.weight)
            elif layer.kind == "linear":
                x = spmm(p, x)
                if layer.bias is not None:
                    x = x + layer.bias
            else:
                cols, oh, ow = im2col(x, layer.kernel_size, layer.stride, layer.padding)
                y = spmm(p, cols)
                if layer.bias is not None:
                    y = y + layer.bias
                x = y.reshape(x.shape[0], oh, ow, -1).transpose(0, 3, 1, 2)
        return x

    __call__ = forward

    def to_dense(self):
        """Dense network holding ``mask * weight`` plus the masks themselves."""
        layers, masks = [], {}
        for i, (layer, p) in enumerate(self.layers):
            if p is not None:
                w = unpack(p)
                layer = _clone_with_weight(layer, w)
                masks[i] = unpack_mask(p)
            layers.append(layer)
        dtype = next((lay.weight.dtype for lay in layers if lay.weight is not None), np.float32)
        return Network(layers, dtype=dtype), masks


def _clone_with_weight(layer, w):
    out = copy.copy(layer)
    out.weight = w.copy()
    return out


def dumps_packed(pnet):
    f = io.BytesIO()
    f.write(MAGIC + struct.pack("<IIII", VERSION, pnet.n, pnet.m, len(pnet.layers)))
    for layer, p in pnet.layers:
        if layer.weight is None:
            write_layer_header(f, layer, 0, NONE, ())
            continue
        code = FLOAT_CODES[layer.weight.dtype]
        dt = CODE_DTYPES[code]
        flags = (HAS_BIAS if layer.bias is not None else 0) | (PACKED if p is not None else 0)
        write_layer_header(f, layer, flags, code, layer.weight.shape)
        if p is not None:
            f.write(struct.pack("<Q", len(p.values)))
            f.write(p.values.astype(dt).tobytes())
            f.write(struct.pack("<Q", len(p.indices)))
            f.write(p.indices)
        else:
            f.write(layer.weight.astype(dt).tobytes())
        if layer.bias is not None:
            f.write(layer.bias.astype(dt).tobytes())
    return f.getvalue()


def loads_packed(buf):
    f = io.BytesIO(buf)
    if _read(f, 4) != MAGIC:
        raise FormatError(f"bad magic, expected {MAGIC!r}")
    version, n, m, count = (read_u(f, "I") for _ in range(4))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    layers = []
    for _ in range(count):
        kind, flags, code, shape, conv = read_layer_header(f)
        if code == NONE:
            layers.append((build_layer(kind, shape, conv, False, False, np.float32), None))
            continue
        dtype = CODE_DTYPES[code].newbyteorder("=")
        layer = build_layer(kind, shape, conv, bool(flags & HAS_BIAS), bool(flags & PACKED), dtype)
        p = None
        if flags & PACKED:
            nvals = read_u(f, "Q")
            values = read_floats(f, code, nvals)
            nidx = read_u(f, "Q")
            p = PackedNm(n, m, tuple(shape), kind, values, _read(f, nidx))
            unpack(p)  # validates index order
        else:
            layer.weight[...] = read_floats(f, code, int(np.prod(shape))).reshape(shape)
        if layer.bias is not None:
            layer.bias[...] = read_floats(f, code, shape[0])
        layers.append((layer, p))
    if f.read(1):
        raise FormatError("trailing bytes after last layer")
    return PackedNetwork(n, m, layers)


def save_packed(path, pnet):
    Path(path).write_bytes(dumps_packed(pnet))


def load_packed(path):
    return loads_packed(Path(path).read_bytes())


# -- FLOPs accounting ---------------------------------------------------------

BACKWARD_MULTIPLIER = 2


def layer_macs(net, input_shape):
    """Dense forward multiply-accumulates per sample for every weighted layer."""
    net.forward(np.zeros((1, *input_shape), dtype=net.dtype))
    net._ready = False
    macs = {}
    for i, layer in enumerate(net.layers):
        if layer.kind == "linear":
            macs[i] = layer.weight.size
        elif layer.kind == "conv2d":
            _, _, _, oh, ow = layer._cache
            macs[i] = layer.weight.size * oh * ow
    return macs


@dataclass
class FlopsModel:
    """Per-layer dense forward cost and the per-epoch density of each layer.

    ``density`` is ``(epochs, layers)``, or ``(epochs,)`` for one density
    shared by all layers.
    """

    layer_fwd: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        self.layer_fwd = np.atleast_1d(np.asarray(self.layer_fwd, dtype=np.float64))
        d = np.asarray(self.density, dtype=np.float64)
        if d.ndim == 1:
            d = np.repeat(d[:, None], len(self.layer_fwd), axis=1)
        self.density = d


def train_flops_ratio(model):
    """Sparse-over-dense training cost; forward and backward both scale with density."""
    per_epoch = (1 + BACKWARD_MULTIPLIER) * (model.density @ model.layer_fwd)
    dense = (1 + BACKWARD_MULTIPLIER) * model.layer_fwd.sum() * len(model.density)
    return float(per_epoch.sum() / dense)


def inference_flops_fraction(model, epoch=-1):
    return float(model.density[epoch] @ model.layer_fwd / model.layer_fwd.sum())
