"""Windowed multi-head self-attention with an injected additive logit bias.

The same attention core serves two bias sources: a coordinate-difference
table (backbone) and a depth-difference table (head). Shifted variants roll
the feature map cyclically before partitioning; the partition record makes
the inverse exact.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, UsageError
from .layers import LayerNorm, Linear, collect_params
from .tensor import Tensor


@dataclass(frozen=True)
class AttentionConfig:
    num_heads: int
    head_dim: int
    window: int
    shift: int

    def __post_init__(self):
        if self.shift not in (0, self.window // 2):
            raise ConfigError(f"shift {self.shift} must be 0 or window/2 ({self.window // 2})")

    @property
    def channels(self):
        return self.num_heads * self.head_dim

    @property
    def tokens(self):
        return self.window * self.window


@dataclass(frozen=True)
class WindowRecord:
    """Everything needed to undo a window partition exactly."""

    height: int
    width: int
    window: int
    shift: int


@functools.lru_cache(maxsize=256)
def _partition_perm(h, w, win, shift):
    """Permutation taking flattened (h*w) pixels to window-major token order,
    after a cyclic roll by (-shift, -shift)."""
    rows = (np.arange(h) + shift) % h
    cols = (np.arange(w) + shift) % w
    rolled = rows[:, None] * w + cols[None, :]
    nh, nw = h // win, w // win
    blocks = rolled.reshape(nh, win, nw, win).transpose(0, 2, 1, 3)
    perm = blocks.reshape(-1)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return perm, inv


def window_partition(x: Tensor, win: int, shift: int):
    """H,W,C feature -> (numWindows, win*win, C) tokens plus inverse record."""
    h, w = x.data.shape[0], x.data.shape[1]
    if h % win or w % win:
        raise UsageError(f"feature {h}x{w} not divisible by window {win}")
    if shift >= win:
        raise UsageError(f"shift {shift} must be < window {win}")
    c = x.data.shape[2]
    perm, _ = _partition_perm(h, w, win, shift)
    flat = T.reshape(x, (h * w, c))
    tokens = T.index_select(flat, perm, unique=True)
    windows = T.reshape(tokens, ((h // win) * (w // win), win * win, c))
    return windows, WindowRecord(h, w, win, shift)


def window_unpartition(windows: Tensor, rec: WindowRecord) -> Tensor:
    nw = (rec.height // rec.window) * (rec.width // rec.window)
    n = rec.window * rec.window
    if windows.data.shape[:2] != (nw, n):
        raise UsageError(f"windows {windows.data.shape} do not match record {rec}")
    c = windows.data.shape[2]
    _, inv = _partition_perm(rec.height, rec.width, rec.window, rec.shift)
    flat = T.reshape(windows, (nw * n, c))
    restored = T.index_select(flat, inv, unique=True)
    return T.reshape(restored, (rec.height, rec.width, c))


def partition_grid(grid: np.ndarray, win: int, shift: int) -> np.ndarray:
    """Same partitioning for a plain (H, W) array (e.g. depth bins)."""
    h, w = grid.shape
    perm, _ = _partition_perm(h, w, win, shift)
    return grid.reshape(-1)[perm].reshape((h // win) * (w // win), win * win)


@functools.lru_cache(maxsize=64)
def relative_position_index(win: int) -> np.ndarray:
    """n x n matrix of coordinate-difference table rows.

    Entry (p, q) encodes coord(p) - coord(q) offset into [0, (2*win-1)^2).
    """
    ys, xs = np.meshgrid(np.arange(win), np.arange(win), indexing="ij")
    coords = np.stack([ys.reshape(-1), xs.reshape(-1)], axis=1)
    delta = coords[:, None, :] - coords[None, :, :]
    return (delta[..., 0] + win - 1) * (2 * win - 1) + (delta[..., 1] + win - 1)


def _attention_core(q: Tensor, k: Tensor, v: Tensor, bias, head_dim: int) -> Tensor:
    """softmax(q kᵀ / sqrt(d) + bias) v over the last two axes."""
    logits = T.mul(T.matmul(q, T.transpose(k, tuple(range(q.data.ndim - 2)) + (q.data.ndim - 1, q.data.ndim - 2))),
                   1.0 / math.sqrt(head_dim))
    if bias is not None:
        logits = T.add(logits, bias)
    shape = logits.data.shape
    flat = T.reshape(logits, (-1, shape[-1]))
    attn = T.reshape(T.softmax_rows(flat), shape)
    return T.matmul(attn, v)


def biased_attention(q: Tensor, k: Tensor, v: Tensor, bias: Tensor) -> Tensor:
    """Per-head attention with an additive logit bias.

    q, k, v: (heads, n, head_dim); bias: (heads, n, n).
    """
    for t in (q, k, v, bias):
        if t.data.ndim != 3:
            raise UsageError(f"expected 3-D tensors, got shape {t.data.shape}")
    heads, n, dh = q.data.shape
    if k.data.shape != (heads, n, dh) or v.data.shape != (heads, n, dh):
        raise UsageError("q/k/v shapes disagree")
    if bias.data.shape != (heads, n, n):
        raise UsageError(f"bias shape {bias.data.shape} != ({heads}, {n}, {n})")
    return _attention_core(q, k, v, bias, dh)


class WindowAttention:
    """Pre-norm residual attention over window tokens (nw, n, C).

    The additive bias is supplied by the caller per forward pass: either a
    (heads, n, n) tensor shared by all windows or (nw, heads, n, n).
    """

    def __init__(self, init, channels, num_heads):
        if channels % num_heads:
            raise ConfigError(f"channels {channels} not divisible by heads {num_heads}")
        self.channels = channels
        self.num_heads = num_heads
        self.head_dim = channels // num_heads
        self.norm = LayerNorm(init, channels)
        self.qkv = Linear(init, channels, 3 * channels)
        self.proj = Linear(init, channels, channels)

    def __call__(self, x: Tensor, bias) -> Tensor:
        nw, n, c = x.data.shape
        h = self.norm(T.reshape(x, (nw * n, c)))
        qkv = self.qkv(h)
        parts = []
        for i in range(3):
            part = T.reshape(T.narrow_last(qkv, i * c, c), (nw, n, self.num_heads, self.head_dim))
            parts.append(T.transpose(part, (0, 2, 1, 3)))
        q, k, v = parts
        out = _attention_core(q, k, v, bias, self.head_dim)
        out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (nw * n, c))
        return T.add(x, T.reshape(self.proj(out), (nw, n, c)))

    def params(self):
        return collect_params("", [("ln1", self.norm), ("qkv", self.qkv), ("proj", self.proj)])


class PositionBiasTable:
    """Learnable (2w-1)^2 x heads table indexed by coordinate differences."""

    def __init__(self, init, window, num_heads):
        self.window = window
        self.num_heads = num_heads
        self.table = init.zeros(((2 * window - 1) ** 2, num_heads))
        self.index = relative_position_index(window)

    def bias(self) -> Tensor:
        n = self.window * self.window
        rows = T.index_select(self.table, self.index.reshape(-1))
        return T.transpose(T.reshape(rows, (n, n, self.num_heads)), (2, 0, 1))

    def params(self):
        return [("pos_table", self.table)]


class GluFeedForward:
    """Pre-norm residual feed-forward with a gated linear unit."""

    def __init__(self, init, channels, hidden=None):
        hidden = hidden or channels
        self.norm = LayerNorm(init, channels)
        self.expand = Linear(init, channels, 2 * hidden)
        self.proj = Linear(init, hidden, channels)

    def __call__(self, x: Tensor) -> Tensor:
        shape = x.data.shape
        flat = T.reshape(x, (-1, shape[-1]))
        out = self.proj(T.glu(self.expand(self.norm(flat))))
        return T.add(x, T.reshape(out, shape))

    def params(self):
        return collect_params("", [("ln2", self.norm), ("ff1", self.expand), ("ff2", self.proj)])
