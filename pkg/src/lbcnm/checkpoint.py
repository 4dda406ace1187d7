"""``LBC1`` checkpoint and mask container (layout in docs/FORMATS.md)."""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .numerics import Conv2d, Flatten, Linear, Network, ReLU

MAGIC = b"LBC1"
VERSION = 1

KIND_TAGS = {"linear": 0, "conv2d": 1, "relu": 2, "flatten": 3}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}

NONE, BITS, F32, F64 = 0, 1, 4, 8
FLOAT_CODES = {np.dtype(np.float32): F32, np.dtype(np.float64): F64}
CODE_DTYPES = {F32: np.dtype("<f4"), F64: np.dtype("<f8")}

HAS_BIAS, SPARSIFIABLE = 1, 2


class FormatError(ValueError):
    pass


def _read(f, n):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: wanted {n} bytes at offset {f.tell() - len(buf)}")
    return buf


def read_u(f, fmt):
    return struct.unpack("<" + fmt, _read(f, struct.calcsize(fmt)))[0]


def write_layer_header(f, layer, flags, code, shape):
    f.write(struct.pack("<BBBB", KIND_TAGS[layer.kind], flags, code, len(shape)))
    f.write(struct.pack(f"<{len(shape)}Q", *shape))
    if layer.kind == "conv2d":
        f.write(struct.pack("<II", layer.stride, layer.padding))


def read_layer_header(f):
    tag, flags, code, ndim = struct.unpack("<BBBB", _read(f, 4))
    if tag not in TAG_KINDS:
        raise FormatError(f"unknown layer kind tag {tag}")
    shape = struct.unpack(f"<{ndim}Q", _read(f, 8 * ndim))
    conv = struct.unpack("<II", _read(f, 8)) if TAG_KINDS[tag] == "conv2d" else None
    return TAG_KINDS[tag], flags, code, shape, conv


def read_floats(f, code, count):
    if code not in CODE_DTYPES:
        raise FormatError(f"unknown float code {code}")
    dt = CODE_DTYPES[code]
    return np.frombuffer(_read(f, dt.itemsize * count), dtype=dt).astype(dt.newbyteorder("="))


def build_layer(kind, shape, conv, has_bias, sparsifiable, dtype):
    if kind == "linear":
        return Linear(shape[1], shape[0], bias=has_bias, sparsifiable=sparsifiable, dtype=dtype)
    if kind == "conv2d":
        if shape[2] != shape[3]:
            raise FormatError(f"only square kernels are supported, got {shape}")
        return Conv2d(shape[1], shape[0], shape[2], stride=conv[0], padding=conv[1],
                      bias=has_bias, sparsifiable=sparsifiable, dtype=dtype)
    return ReLU() if kind == "relu" else Flatten()


def dumps_checkpoint(net):
    f = io.BytesIO()
    f.write(MAGIC + struct.pack("<II", VERSION, len(net.layers)))
    for layer in net.layers:
        if layer.weight is None:
            write_layer_header(f, layer, 0, NONE, ())
            continue
        code = FLOAT_CODES[layer.weight.dtype]
        flags = (HAS_BIAS if layer.bias is not None else 0) | (SPARSIFIABLE if layer.sparsifiable else 0)
        write_layer_header(f, layer, flags, code, layer.weight.shape)
        dt = CODE_DTYPES[code]
        f.write(layer.weight.astype(dt).tobytes())
        if layer.bias is not None:
            f.write(layer.bias.astype(dt).tobytes())
    return f.getvalue()


def _open(buf, magic):
    f = io.BytesIO(buf)
    if _read(f, 4) != magic:
        raise FormatError(f"bad magic, expected {magic!r}")
    version, count = read_u(f, "I"), read_u(f, "I")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    return f, count


def loads_checkpoint(buf):
    f, count = _open(buf, MAGIC)
    layers, dtype = [], None
    for _ in range(count):
        kind, flags, code, shape, conv = read_layer_header(f)
        if code == NONE:
            layers.append(build_layer(kind, shape, conv, False, False, np.float32))
            continue
        dtype = CODE_DTYPES[code].newbyteorder("=")
        layer = build_layer(kind, shape, conv, bool(flags & HAS_BIAS), bool(flags & SPARSIFIABLE), dtype)
        layer.weight[...] = read_floats(f, code, int(np.prod(shape))).reshape(shape)
        if layer.bias is not None:
            layer.bias[...] = read_floats(f, code, shape[0])
        layers.append(layer)
    if f.read(1):
        raise FormatError("trailing bytes after last layer")
    return Network(layers, dtype=dtype or np.float32)


def dumps_masks(net, masks):
    """Masks share the checkpoint container; payload is one bit per weight (LSB first)."""
    f = io.BytesIO()
    f.write(MAGIC + struct.pack("<II", VERSION, len(net.layers)))
    for i, layer in enumerate(net.layers):
        if layer.weight is None or i not in masks:
            write_layer_header(f, layer, 0, NONE, ())
            continue
        mask = np.asarray(masks[i])
        if mask.shape != layer.weight.shape:
            raise ValueError(f"mask {i} shape {mask.shape} != weight {layer.weight.shape}")
        write_layer_header(f, layer, 0, BITS, mask.shape)
        f.write(np.packbits(mask.reshape(-1).astype(bool), bitorder="little").tobytes())
    return f.getvalue()


def loads_masks(buf):
    f, count = _open(buf, MAGIC)
    masks = {}
    for i in range(count):
        _, _, code, shape, _ = read_layer_header(f)
        if code == NONE:
            continue
        if code != BITS:
            raise FormatError(f"layer {i}: mask payload must be bits, got code {code}")
        size = int(np.prod(shape))
        raw = np.frombuffer(_read(f, -(-size // 8)), dtype=np.uint8)
        masks[i] = np.unpackbits(raw, count=size, bitorder="little").reshape(shape)
    return masks


def save_checkpoint(path, net):
    Path(path).write_bytes(dumps_checkpoint(net))


def load_checkpoint(path):
    return loads_checkpoint(Path(path).read_bytes())


def save_masks(path, net, masks):
    Path(path).write_bytes(dumps_masks(net, masks))


def load_masks(path):
    return loads_masks(Path(path).read_bytes())
