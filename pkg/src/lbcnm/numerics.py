"""Small dense training engine: layers, manual backprop, losses, SGD and the LR curve.

Tensors are plain numpy arrays. Activations always carry the batch on axis 0.
Linear weights are stored ``(out, in)``, conv weights ``(out, in, kh, kw)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when a tensor does not fit the layer it is fed to."""

    def __init__(self, layer_index, message):
        super().__init__(f"layer {layer_index}: {message}")
        self.layer_index = layer_index


def check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")
    return arr


class Linear:
    kind = "linear"

    def __init__(self, in_features, out_features, bias=True, sparsifiable=True, dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = np.zeros((out_features, in_features), dtype=dtype)
        self.bias = np.zeros(out_features, dtype=dtype) if bias else None
        self.sparsifiable = sparsifiable
        self._x = None
        self._w = None

    def init(self, rng, scale=1.0):
        bound = scale * math.sqrt(6.0 / self.in_features)
        self.weight[...] = rng.uniform(-bound, bound, self.weight.shape)
        if self.bias is not None:
            self.bias[...] = 0

    def forward(self, x, w):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"expected (batch, {self.in_features}) input, got {x.shape}")
        self._x, self._w = x, w
        out = x @ w.T
        if self.bias is not None:
            out += self.bias
        return out

    def backward(self, grad):
        x, w = self._x, self._w
        gw = grad.T @ x
        gb = grad.sum(axis=0) if self.bias is not None else None
        return grad @ w, gw, gb


def im2col(x, k, stride, padding):
    """Patch matrix with rows ``(b, oy, ox)`` and columns ordered ``(ky, kx, c)``.

    The channel axis varies fastest so that a column block of ``m`` entries
    lines up with ``m`` consecutive input channels at one kernel position.
    """
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    b, c, oh, ow = win.shape[:4]
    cols = win.transpose(0, 2, 3, 4, 5, 1).reshape(b * oh * ow, k * k * c)
    return cols, oh, ow


def conv_weight_matrix(w):
    """``(out, in, kh, kw)`` -> ``(out, kh*kw*in)`` in the same column order as :func:`im2col`."""
    return w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)


class Conv2d:
    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0,
                 bias=True, sparsifiable=True, dtype=np.float32):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weight = np.zeros(shape, dtype=dtype)
        self.bias = np.zeros(out_channels, dtype=dtype) if bias else None
        self.sparsifiable = sparsifiable
        self._cache = None

    def init(self, rng, scale=1.0):
        fan_in = self.in_channels * self.kernel_size ** 2
        bound = scale * math.sqrt(6.0 / fan_in)
        self.weight[...] = rng.uniform(-bound, bound, self.weight.shape)
        if self.bias is not None:
            self.bias[...] = 0

    def forward(self, x, w):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"expected (batch, {self.in_channels}, h, w) input, got {x.shape}")
        k = self.kernel_size
        if x.shape[2] + 2 * self.padding < k or x.shape[3] + 2 * self.padding < k:
            raise ValueError(f"spatial extent {x.shape[2:]} smaller than kernel {k}")
        cols, oh, ow = im2col(x, k, self.stride, self.padding)
        wm = conv_weight_matrix(w)
        out = cols @ wm.T
        if self.bias is not None:
            out += self.bias
        self._cache = (x.shape, cols, wm, oh, ow)
        b = x.shape[0]
        return out.reshape(b, oh, ow, -1).transpose(0, 3, 1, 2)

    def backward(self, grad):
        xshape, cols, wm, oh, ow = self._cache
        b, c, h, wd = xshape
        k, s, p = self.kernel_size, self.stride, self.padding
        g2 = grad.transpose(0, 2, 3, 1).reshape(b * oh * ow, -1)
        gw = (g2.T @ cols).reshape(-1, k, k, c).transpose(0, 3, 1, 2)
        gb = g2.sum(axis=0) if self.bias is not None else None
        dcols = (g2 @ wm).reshape(b, oh, ow, k, k, c)
        dx = np.zeros((b, c, h + 2 * p, wd + 2 * p), dtype=grad.dtype)
        for ky in range(k):
            for kx in range(k):
                dx[:, :, ky:ky + s * oh:s, kx:kx + s * ow:s] += dcols[:, :, :, ky, kx, :].transpose(0, 3, 1, 2)
        if p:
            dx = dx[:, :, p:-p, p:-p]
        return dx, np.ascontiguousarray(gw), gb


class ReLU:
    kind = "relu"
    weight = None
    bias = None
    sparsifiable = False

    def __init__(self):
        self._pos = None

    def forward(self, x, w=None):
        self._pos = x > 0
        return np.where(self._pos, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return np.where(self._pos, grad, 0).astype(grad.dtype, copy=False), None, None


class Flatten:
    kind = "flatten"
    weight = None
    bias = None
    sparsifiable = False

    def __init__(self):
        self._shape = None

    def forward(self, x, w=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape), None, None


class Network:
    """Ordered stack of layers with a cached forward pass and layer-wise backprop.

    ``masks`` passed to :meth:`forward` is a mapping ``layer index -> mask``
    (weight-shaped, 0/1). Masked layers compute with ``mask * weight``; the
    gradients returned by :meth:`backward` are with respect to that product.
    """

    def __init__(self, layers, dtype=np.float32):
        self.layers = list(layers)
        self.dtype = np.dtype(dtype)
        self._ready = False

    def param_layers(self):
        return [i for i, layer in enumerate(self.layers) if layer.weight is not None]

    def sparsifiable_layers(self):
        return [i for i, layer in enumerate(self.layers) if layer.weight is not None and layer.sparsifiable]

    def init(self, rng, scale=1.0):
        """Uniform He initialisation, bound multiplied by ``scale``; zero biases."""
        for layer in self.layers:
            if layer.weight is not None:
                layer.init(rng, scale)
        return self

    def effective_weight(self, i, masks=None):
        w = self.layers[i].weight
        if masks is not None and i in masks:
            mask = masks[i]
            if mask.shape != w.shape:
                raise ShapeError(i, f"mask shape {mask.shape} does not match weight shape {w.shape}")
            return w * mask.astype(w.dtype, copy=False)
        return w

    def forward(self, x, masks=None):
        x = np.asarray(x, dtype=self.dtype)
        for i, layer in enumerate(self.layers):
            w = self.effective_weight(i, masks) if layer.weight is not None else None
            try:
                x = layer.forward(x, w)
            except ValueError as exc:
                raise ShapeError(i, str(exc)) from None
        self._ready = True
        return check_finite(x, "network output")

    __call__ = forward

    def backward(self, loss_grad):
        """Return ``{layer index: (weight grad, bias grad)}`` for the last forward batch."""
        if not self._ready:
            raise RuntimeError("backward called before forward")
        grads = {}
        g = np.asarray(loss_grad, dtype=self.dtype)
        for i in reversed(range(len(self.layers))):
            g, gw, gb = self.layers[i].backward(g)
            if gw is not None:
                grads[i] = (gw, gb)
        self._ready = False
        return grads

    def copy(self):
        import copy
        return copy.deepcopy(self)


def mlp(widths, dtype=np.float32, bias=True):
    layers = []
    for j, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        layers.append(Linear(a, b, bias=bias, dtype=dtype))
        if j < len(widths) - 2:
            layers.append(ReLU())
    return Network(layers, dtype=dtype)


def small_conv(in_channels, image_size, channels, classes, kernel_size=3, dtype=np.float32):
    """conv-relu-...-flatten-linear stack with 'same' padding."""
    layers = []
    c = in_channels
    for width in channels:
        layers += [Conv2d(c, width, kernel_size, padding=kernel_size // 2, dtype=dtype), ReLU()]
        c = width
    layers += [Flatten(), Linear(c * image_size * image_size, classes, dtype=dtype)]
    return Network(layers, dtype=dtype)


# -- losses -------------------------------------------------------------------

def cross_entropy(logits, labels):
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"label out of range [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    value = -logp[np.arange(b), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(b), labels] -= 1
    grad /= b
    return float(value), grad.astype(logits.dtype, copy=False)


def mse(pred, target):
    pred = np.asarray(pred)
    target = np.asarray(target, dtype=pred.dtype).reshape(pred.shape)
    diff = pred - target
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


def loss(kind, logits, targets):
    """Mean-reduced loss and its gradient with respect to ``logits``."""
    if kind == "cross_entropy":
        value, grad = cross_entropy(logits, targets)
    elif kind == "mse":
        value, grad = mse(logits, targets)
    else:
        raise ValueError(f"unknown loss {kind!r}")
    if not math.isfinite(value):
        raise FloatingPointError("non-finite loss")
    return value, grad


# -- optimisation -------------------------------------------------------------

@dataclass
class SgdConfig:
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0005
    warmup_epochs: int = 5
    total_epochs: int = 120

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be positive")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError("need 0 <= warmup_epochs < total_epochs")


def lr_at(cfg, epoch):
    """Linear warmup from 0 to ``base_lr``, then cosine decay to 0 at ``total_epochs``.

    ``epoch`` may be fractional (iteration-level schedules). ``epoch ==
    total_epochs`` is accepted and returns the limit value 0.
    """
    if not 0 <= epoch <= cfg.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.total_epochs}]")
    if epoch < cfg.warmup_epochs:
        return cfg.base_lr * epoch / cfg.warmup_epochs
    span = cfg.total_epochs - cfg.warmup_epochs
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * (epoch - cfg.warmup_epochs) / span))


@dataclass
class Sgd:
    """SGD with momentum and coupled weight decay; masked entries are frozen.

    ``v <- momentum * v + (g + wd * w)``, ``w <- w - lr * v``. Entries whose
    mask bit is 0 receive no update and keep their buffer untouched.
    """

    cfg: SgdConfig
    buffers: dict = field(default_factory=dict)

    def _update(self, key, param, grad, lr, mask):
        if grad.shape != param.shape:
            raise ValueError(f"gradient shape {grad.shape} does not match parameter {param.shape}")
        d = grad + self.cfg.weight_decay * param if self.cfg.weight_decay else grad
        if self.cfg.momentum:
            old = self.buffers.get(key)
            buf = d.copy() if old is None else self.cfg.momentum * old + d
            if mask is not None:
                buf = np.where(mask, buf, 0 if old is None else old)
            self.buffers[key] = buf
            d = buf
        step = (lr * d).astype(param.dtype, copy=False)
        if mask is not None:
            step = np.where(mask, step, 0).astype(param.dtype, copy=False)
        param -= step

    def step(self, net, grads, lr, masks=None):
        for i, (gw, gb) in grads.items():
            layer = net.layers[i]
            mask = None if masks is None or i not in masks else masks[i].astype(bool)
            self._update((i, "w"), layer.weight, gw, lr, mask)
            if gb is not None:
                self._update((i, "b"), layer.bias, gb, lr, None)
        return net


def sgd_step(net, grads, cfg, epoch, iteration, iters_per_epoch=1, masks=None, opt=None):
    """One optimiser step with the learning rate read from :func:`lr_at`.

    The fractional epoch ``epoch + iteration / iters_per_epoch`` selects the
    rate. Pass a persistent ``opt`` to carry momentum between calls.
    """
    opt = opt if opt is not None else Sgd(cfg)
    lr = lr_at(cfg, epoch + iteration / iters_per_epoch)
    opt.step(net, grads, lr, masks)
    return net
