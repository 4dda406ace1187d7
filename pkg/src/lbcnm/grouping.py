"""G x M group view of a layer's weights along the input-channel axis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GroupingError(ValueError):
    pass


@dataclass(frozen=True)
class GroupView:
    layer_id: object
    g: int
    m: int
    shape: tuple
    index_map: np.ndarray  # (g, m) flat indices into weight.ravel()

    @property
    def size(self):
        return self.g * self.m


def make_group_view(shape, m, layout=None, layer_id=None):
    """Build the bijection ``(group, slot) -> flat weight index``.

    Linear ``(out, in)``: each row is cut into blocks of ``m`` along ``in``.
    Conv ``(out, in, kh, kw)``: for every output channel the fibre is ordered
    ``(kh, kw, in)`` with ``in`` fastest, so a group is ``m`` consecutive input
    channels at one kernel position. ``in`` must be divisible by ``m``.
    """
    shape = tuple(int(s) for s in shape)
    if layout is None:
        layout = "linear" if len(shape) == 2 else "conv2d"
    if m < 1:
        raise GroupingError(f"group width must be positive, got {m}")
    if layout == "linear":
        if len(shape) != 2:
            raise GroupingError(f"linear layout needs a 2-D weight, got {shape}")
        cin = shape[1]
        order = np.arange(int(np.prod(shape)))
    elif layout == "conv2d":
        if len(shape) != 4:
            raise GroupingError(f"conv2d layout needs a 4-D weight, got {shape}")
        cin = shape[1]
        order = np.arange(int(np.prod(shape))).reshape(shape).transpose(0, 2, 3, 1).ravel()
    else:
        raise GroupingError(f"unknown layout {layout!r}")
    if cin % m:
        raise GroupingError(
            f"layer {layer_id}: input-channel extent {cin} (weight shape {shape}) is not divisible by m={m}")
    index_map = order.reshape(-1, m)
    index_map.setflags(write=False)
    return GroupView(layer_id, index_map.shape[0], m, shape, index_map)


def gather(view, weights):
    weights = np.asarray(weights)
    if weights.shape != view.shape:
        raise GroupingError(f"weights shape {weights.shape} does not match view {view.shape}")
    return weights.reshape(-1)[view.index_map]


def scatter(view, groups, out=None):
    groups = np.asarray(groups)
    if groups.shape != (view.g, view.m):
        raise GroupingError(f"expected ({view.g}, {view.m}) groups, got {groups.shape}")
    if out is None:
        out = np.empty(view.shape, dtype=groups.dtype)
    flat = out.reshape(-1)
    flat[view.index_map] = groups
    return out
