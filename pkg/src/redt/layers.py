"""Small parameterized building blocks on top of the tensor engine.

Each layer exposes ``params()`` as ``[(name, Tensor), ...]`` so containers can
compose dotted checkpoint names explicitly.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def trunc_normal(rng, shape, std=0.02, dtype=np.float32):
    """Normal(0, std) redrawn until within 2 std (true truncation, seeded)."""
    vals = rng.normal(0.0, std, size=shape)
    bad = np.abs(vals) > 2 * std
    while np.any(bad):
        vals[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(vals) > 2 * std
    return vals.astype(dtype)


class Initializer:
    """Carries the rng and dtype used for every parameter of one model."""

    def __init__(self, rng, dtype=np.float32, std=0.02):
        self.rng = rng
        self.dtype = dtype
        self.std = std

    def weight(self, shape):
        return Tensor(trunc_normal(self.rng, shape, self.std, self.dtype), requires_grad=True)

    def zeros(self, shape):
        return Tensor(np.zeros(shape, dtype=self.dtype), requires_grad=True)

    def ones(self, shape):
        return Tensor(np.ones(shape, dtype=self.dtype), requires_grad=True)


class Linear:
    def __init__(self, init, in_dim, out_dim):
        self.w = init.weight((in_dim, out_dim))
        self.b = init.zeros((out_dim,))

    def __call__(self, x):
        return T.add(T.matmul(x, self.w), self.b)

    def params(self):
        return [("w", self.w), ("b", self.b)]


class LayerNorm:
    def __init__(self, init, dim, eps=1e-5):
        self.gamma = init.ones((dim,))
        self.beta = init.zeros((dim,))
        self.eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)

    def params(self):
        return [("g", self.gamma), ("b", self.beta)]


class BatchNorm:
    """Channel-wise normalization over the per-image batch (momentum-0.1
    running statistics are tracked for diagnostics/checkpoints).

    The forward always normalizes by the current image's statistics: with an
    effective batch of one image, training-mode statistics are per-image, and
    switching to running averages at evaluation shifts every feature map the
    model ever saw. Measured on trained checkpoints, running-stat evaluation
    collapses predictions to a near-constant, so evaluation keeps per-image
    statistics too; ``training`` only gates the buffer updates.
    """

    def __init__(self, init, dim, eps=1e-5, momentum=0.1):
        self.gamma = init.ones((dim,))
        self.beta = init.zeros((dim,))
        self.eps = eps
        self.momentum = momentum
        self.running_mean = np.zeros(dim, dtype=init.dtype)
        self.running_var = np.ones(dim, dtype=init.dtype)
        self.training = True

    def __call__(self, x):
        axes = tuple(range(x.data.ndim - 1))
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if self.training:
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mean).astype(self.running_mean.dtype)
            self.running_var = ((1 - m) * self.running_var + m * var).astype(self.running_var.dtype)
        return T.batch_norm(x, self.gamma, self.beta, mean, var, self.eps, stats_from_batch=True)

    def params(self):
        return [("g", self.gamma), ("b", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]


class Conv2d:
    def __init__(self, init, in_ch, out_ch, ksize=3):
        self.w = init.weight((ksize, ksize, in_ch, out_ch))
        self.b = init.zeros((out_ch,))
        self.pad = ksize // 2

    def __call__(self, x):
        return T.conv2d(x, self.w, self.b, pad=self.pad)

    def params(self):
        return [("w", self.w), ("b", self.b)]


class DepthwiseConv2d:
    def __init__(self, init, ch, ksize=3):
        self.w = init.weight((ksize, ksize, ch))
        self.b = init.zeros((ch,))
        self.pad = ksize // 2

    def __call__(self, x):
        return T.depthwise_conv2d(x, self.w, self.b, pad=self.pad)

    def params(self):
        return [("w", self.w), ("b", self.b)]


def collect_params(prefix, parts):
    """Flatten [(name, layer-or-tensor)] into dotted (name, Tensor) pairs."""
    out = []
    for name, obj in parts:
        full = f"{prefix}.{name}" if prefix else name
        if isinstance(obj, Tensor):
            out.append((full, obj))
        else:
            out.extend((f"{full}.{n}", t) for n, t in obj.params())
    return out
