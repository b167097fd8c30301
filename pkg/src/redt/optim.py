"""AdamW with decoupled weight decay, warmup-decay schedule, gradient clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .tensor import Tensor


@dataclass
class LRSchedule:
    """Piecewise-linear ramp: lr_start -> lr_max -> lr_end.

    The peak is reached at floor(warmup_fraction * total_iters).
    """

    lr_start: float = 4e-6
    lr_max: float = 1e-4
    lr_end: float = 1e-6
    total_iters: int = 2000
    warmup_fraction: float = 0.25

    def lr_at(self, it: int) -> float:
        if not 0 <= it <= self.total_iters:
            raise UsageError(f"iteration {it} outside [0, {self.total_iters}]")
        warm = math.floor(self.warmup_fraction * self.total_iters)
        if it <= warm:
            if warm == 0:
                return self.lr_start
            return self.lr_start + (self.lr_max - self.lr_start) * it / warm
        return self.lr_max + (self.lr_end - self.lr_max) * (it - warm) / (self.total_iters - warm)


def clip_global_norm(grads, max_norm: float):
    """Scale all grads in place so the joint L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    if max_norm <= 0:
        raise UsageError("max_norm must be positive")
    total = 0.0
    for g in grads:
        if g is not None:
            total += float(np.sum(g.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            if g is not None:
                g *= scale
    return norm


class AdamW:
    """Decoupled weight decay: the decay multiplies the parameter directly,
    never the gradient/moment path."""

    def __init__(self, params, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.1):
        self.params = list(params)
        for p in self.params:
            if not isinstance(p, Tensor):
                raise UsageError("AdamW expects Tensor parameters")
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**t
        bc2 = 1.0 - b2**t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise UsageError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def grads(self):
        return [p.grad for p in self.params]
