"""End-to-end depth network at desk scale.

Pipeline: a windowed-attention backbone with coordinate-difference bias
emits a 4-level pyramid; a parallel convolutional neck merges all scales at
1/4 resolution; the head alternates depth-relative attention blocks with an
estimation block, refining the depth map over several iterations. Each
iteration's bias is built from the previous (detached) depth map.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .attention import (
    AttentionConfig,
    GluFeedForward,
    PositionBiasTable,
    WindowAttention,
    partition_grid,
    window_partition,
    window_unpartition,
)
from .errors import ConfigError, UsageError
from .layers import BatchNorm, Conv2d, DepthwiseConv2d, Initializer, LayerNorm, Linear, collect_params
from .relbias import BiasEmbeddingTable, BinConfig, build_bias, discretize_depth
from .tensor import Tensor


@dataclass
class ModelConfig:
    image_hw: tuple = (64, 64)
    backbone_widths: tuple = (32, 64, 128, 256)
    backbone_depths: tuple = (2, 2, 2, 2)
    backbone_heads: tuple = (1, 2, 4, 8)
    backbone_window: int = 4
    neck_channels: int = 64
    head_iterations: int = 3
    head_blocks: int = 2
    head_heads: int = 8
    head_window: int = 8
    head_shift: int = 4
    num_bins: int = 128
    depth_min: float = 1.0
    depth_max: float = 20.0

    def __post_init__(self):
        h, w = self.image_hw
        if h % 32 or w % 32:
            raise ConfigError(f"image size {h}x{w} must be divisible by 32")
        if len(self.backbone_widths) != 4 or len(self.backbone_depths) != 4 or len(self.backbone_heads) != 4:
            raise ConfigError("backbone needs exactly 4 stages")
        for width, heads in zip(self.backbone_widths, self.backbone_heads):
            if width % heads:
                raise ConfigError(f"stage width {width} not divisible by heads {heads}")
        if self.neck_channels % self.head_heads:
            raise ConfigError(f"neck channels {self.neck_channels} not divisible by head heads {self.head_heads}")
        if self.head_iterations < 1:
            raise ConfigError("need at least one head iteration")
        if self.head_shift >= self.head_window:
            raise ConfigError(f"head shift {self.head_shift} must be < window {self.head_window}")
        if not self.depth_max > self.depth_min:
            raise ConfigError("depth_max must exceed depth_min")

    def bin_config(self) -> BinConfig:
        return BinConfig(self.depth_min, self.depth_max, self.num_bins)

    def to_dict(self):
        d = asdict(self)
        for key in ("image_hw", "backbone_widths", "backbone_depths", "backbone_heads"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("image_hw", "backbone_widths", "backbone_depths", "backbone_heads"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _effective_window(h, w, window, shift):
    """Cap the window at the feature size; drop the shift when one window
    already covers the whole map."""
    win = min(window, h, w)
    if win >= h and win >= w:
        return win, 0
    if shift == 0:
        return win, 0
    return win, min(shift, win // 2)


def _space_to_depth(x: Tensor, s: int) -> Tensor:
    h, w, c = x.data.shape
    x = T.reshape(x, (h // s, s, w // s, s, c))
    x = T.transpose(x, (0, 2, 1, 3, 4))
    return T.reshape(x, (h // s, w // s, s * s * c))


def _silu(x):
    return T.silu(x)


class PatchEmbed:
    """Stride-4 patch embedding: space-to-depth + linear + layer norm."""

    def __init__(self, init, width):
        self.proj = Linear(init, 48, width)
        self.norm = LayerNorm(init, width)

    def __call__(self, x):
        h4 = _space_to_depth(x, 4)
        hh, ww, c = h4.data.shape
        out = self.norm(self.proj(T.reshape(h4, (hh * ww, c))))
        return T.reshape(out, (hh, ww, -1))

    def params(self):
        return collect_params("", [("proj", self.proj), ("ln", self.norm)])


class PatchMerge:
    """2x downsampling between stages: space-to-depth + norm + linear."""

    def __init__(self, init, in_width, out_width):
        self.norm = LayerNorm(init, 4 * in_width)
        self.proj = Linear(init, 4 * in_width, out_width)

    def __call__(self, x):
        h2 = _space_to_depth(x, 2)
        hh, ww, c = h2.data.shape
        out = self.proj(self.norm(T.reshape(h2, (hh * ww, c))))
        return T.reshape(out, (hh, ww, -1))

    def params(self):
        return collect_params("", [("ln", self.norm), ("proj", self.proj)])


class BackboneBlock:
    """Windowed attention with coordinate bias, then a gated feed-forward."""

    def __init__(self, init, channels, heads, window, shift):
        self.cfg = AttentionConfig(heads, channels // heads, window, shift)
        self.attn = WindowAttention(init, channels, heads)
        self.ff = GluFeedForward(init, channels, hidden=2 * channels)
        self._tables = {}
        self._init = init

    def _table_for(self, win):
        if win not in self._tables:
            self._tables[win] = PositionBiasTable(self._init, win, self.cfg.num_heads)
        return self._tables[win]

    def prepare(self, h, w):
        """Instantiate the bias table for the window this block will see."""
        win, _ = _effective_window(h, w, self.cfg.window, self.cfg.shift)
        self._table_for(win)

    def __call__(self, x):
        h, w, _ = x.data.shape
        win, shift = _effective_window(h, w, self.cfg.window, self.cfg.shift)
        table = self._table_for(win)
        windows, rec = window_partition(x, win, shift)
        out = self.attn(windows, table.bias())
        out = self.ff(out)
        return window_unpartition(out, rec)

    def params(self):
        out = list(self.attn.params())
        for win in sorted(self._tables):
            out.extend(self._tables[win].params())
        return out + list(self.ff.params())


class Backbone:
    """Four stages of shifted-window blocks with 2x merges in between."""

    def __init__(self, init, cfg: ModelConfig):
        self.cfg = cfg
        h, w = cfg.image_hw
        self.stages = []
        self.merges = []
        res = (h // 4, w // 4)
        for s in range(4):
            blocks = []
            for b in range(cfg.backbone_depths[s]):
                shift = 0 if b % 2 == 0 else cfg.backbone_window // 2
                blk = BackboneBlock(init, cfg.backbone_widths[s], cfg.backbone_heads[s], cfg.backbone_window, shift)
                blk.prepare(*res)
                blocks.append(blk)
            self.stages.append(blocks)
            if s < 3:
                self.merges.append(PatchMerge(init, cfg.backbone_widths[s], cfg.backbone_widths[s + 1]))
            res = (res[0] // 2, res[1] // 2)
        self.patch_embed = PatchEmbed(init, cfg.backbone_widths[0])

    def __call__(self, image: Tensor):
        h, w, c = image.data.shape
        if h % 32 or w % 32 or c != 3:
            raise UsageError(f"backbone input must be HxWx3 with H,W divisible by 32, got {image.data.shape}")
        x = self.patch_embed(image)
        pyramid = []
        for s, blocks in enumerate(self.stages):
            for blk in blocks:
                x = blk(x)
            pyramid.append(x)
            if s < 3:
                x = self.merges[s](x)
        return pyramid

    def params(self):
        out = collect_params("patch_embed", self.patch_embed.params())
        for s, blocks in enumerate(self.stages):
            for b, blk in enumerate(blocks):
                out.extend(collect_params(f"stage{s}.block{b}", blk.params()))
            if s < 3:
                out.extend(collect_params(f"stage{s}.merge", self.merges[s].params()))
        return out


class ConvNeckBlock:
    """Two conv+BN+SiLU stages, then bilinear upsampling to 1/4 scale."""

    def __init__(self, init, in_ch, out_ch):
        self.conv0 = Conv2d(init, in_ch, out_ch)
        self.bn0 = BatchNorm(init, out_ch)
        self.conv1 = Conv2d(init, out_ch, out_ch)
        self.bn1 = BatchNorm(init, out_ch)

    def __call__(self, x, out_hw):
        x = _silu(self.bn0(self.conv0(x)))
        x = _silu(self.bn1(self.conv1(x)))
        if x.data.shape[:2] != tuple(out_hw):
            x = T.bilinear_resize(x, out_hw[0], out_hw[1])
        return x

    def params(self):
        return collect_params(
            "", [("conv0", self.conv0), ("bn0", self.bn0), ("conv1", self.conv1), ("bn1", self.bn1)]
        )

    def bns(self):
        return [("bn0", self.bn0), ("bn1", self.bn1)]


class Neck:
    """Processes every pyramid level in parallel and fuses them at once."""

    def __init__(self, init, cfg: ModelConfig):
        n = cfg.neck_channels
        self.cnbs = [ConvNeckBlock(init, w, n) for w in cfg.backbone_widths]
        self.proj = Linear(init, 4 * n, n)
        self.norm = LayerNorm(init, n)

    def __call__(self, pyramid):
        out_hw = pyramid[0].data.shape[:2]
        gs = [cnb(f, out_hw) for cnb, f in zip(self.cnbs, pyramid)]
        merged = T.concat(gs, axis=2)
        h, w, c = merged.data.shape
        fused = self.norm(self.proj(T.reshape(merged, (h * w, c))))
        return T.reshape(fused, (h, w, -1))

    def params(self):
        out = []
        for i, cnb in enumerate(self.cnbs):
            out.extend(collect_params(f"cnb{i}", cnb.params()))
        out.extend(collect_params("proj", self.proj.params()))
        out.extend(collect_params("ln", self.norm.params()))
        return out

    def bns(self):
        out = []
        for i, cnb in enumerate(self.cnbs):
            out.extend((f"cnb{i}.{n}", bn) for n, bn in cnb.bns())
        return out


class DepthEstimationBlock:
    """Three convolutions and a sigmoid readout spanning [d_min, d_max]."""

    def __init__(self, init, in_ch, d_min, d_max):
        mid = max(in_ch // 2, 4)
        low = max(in_ch // 4, 4)
        self.conv0 = Conv2d(init, in_ch, mid)
        self.conv1 = Conv2d(init, mid, low)
        self.conv2 = Conv2d(init, low, 1)
        self.d_min = d_min
        self.d_max = d_max

    def __call__(self, x):
        z = self.conv2(_silu(self.conv1(_silu(self.conv0(x)))))
        h, w, _ = z.data.shape
        s = T.sigmoid(T.reshape(z, (h, w)))
        return T.add(T.mul(s, self.d_max - self.d_min), self.d_min)

    def params(self):
        return collect_params("", [("conv0", self.conv0), ("conv1", self.conv1), ("conv2", self.conv2)])


class ConvFeedForward:
    """Feed-forward with a depthwise convolution between gate and projection.

    Tokens must form square windows so the convolution has a 2-D layout.
    """

    def __init__(self, init, channels):
        self.norm = LayerNorm(init, channels)
        self.expand = Linear(init, channels, 2 * channels)
        self.dw = DepthwiseConv2d(init, channels)
        self.proj = Linear(init, channels, channels)

    def __call__(self, x: Tensor, window: int) -> Tensor:
        nw, n, c = x.data.shape
        if window * window != n:
            raise UsageError(f"{n} tokens do not form a {window}x{window} window")
        h = T.reshape(T.glu(self.expand(self.norm(T.reshape(x, (nw * n, c))))), (nw, n, c))
        pieces = []
        for wi in range(nw):
            img = T.reshape(T.index_select(h, np.array([wi]), unique=True), (window, window, c))
            pieces.append(T.reshape(self.dw(img), (1, n, c)))
        conved = pieces[0] if nw == 1 else T.concat(pieces, axis=0)
        out = self.proj(T.reshape(conved, (nw * n, c)))
        return T.add(x, T.reshape(out, (nw, n, c)))

    def params(self):
        return collect_params(
            "", [("ln2", self.norm), ("cff_expand", self.expand), ("cff_dw", self.dw), ("cff_proj", self.proj)]
        )


class HeadBlock:
    """One depth-relative attention block plus its convolutional feed-forward."""

    def __init__(self, init, cfg: ModelConfig, shift):
        self.cfg = AttentionConfig(cfg.head_heads, cfg.neck_channels // cfg.head_heads, cfg.head_window, shift)
        self.attn = WindowAttention(init, cfg.neck_channels, cfg.head_heads)
        self.table = BiasEmbeddingTable(init, cfg.bin_config(), cfg.head_heads)
        self.cff = ConvFeedForward(init, cfg.neck_channels)

    def __call__(self, feature: Tensor, bins: np.ndarray) -> Tensor:
        h, w, _ = feature.data.shape
        win, shift = _effective_window(h, w, self.cfg.window, self.cfg.shift)
        windows, rec = window_partition(feature, win, shift)
        bias = build_bias(partition_grid(bins, win, shift), self.table)
        x = self.attn(windows, bias)
        x = self.cff(x, win)
        return window_unpartition(x, rec)

    def params(self):
        return list(self.attn.params()) + list(self.table.params()) + list(self.cff.params())


class Head:
    """K refinement iterations; each re-bins the latest depth map (detached),
    runs its attention blocks, and emits the next map."""

    def __init__(self, init, cfg: ModelConfig):
        self.cfg = cfg
        self.iters = []
        for _ in range(cfg.head_iterations):
            blocks = []
            for j in range(cfg.head_blocks):
                shift = 0 if j % 2 == 0 else cfg.head_shift
                blocks.append(HeadBlock(init, cfg, shift))
            self.iters.append(blocks)
        self.debs = [
            DepthEstimationBlock(init, cfg.neck_channels, cfg.depth_min, cfg.depth_max)
            for _ in range(cfg.head_iterations + 1)
        ]

    def initial_depth(self, feature: Tensor) -> Tensor:
        return self.debs[0](feature)

    def iteration(self, i: int, feature: Tensor, depth: Tensor):
        """Run iteration ``i`` from a depth map; returns (feature, next map).

        The incoming map is detached before binning: bins are piecewise
        constant, so the bias path carries no gradient back into it.
        """
        bins = discretize_depth(depth.detach().data, self.cfg.bin_config())
        for block in self.iters[i]:
            feature = block(feature, bins)
        return feature, self.debs[i + 1](feature)

    def params(self):
        out = []
        for i, blocks in enumerate(self.iters):
            for j, blk in enumerate(blocks):
                out.extend(collect_params(f"iter{i}.block{j}", blk.params()))
        for i, deb in enumerate(self.debs):
            out.extend(collect_params(f"deb{i}", deb.params()))
        return out

    def theta_params(self):
        return [
            (f"iter{i}.block{j}.theta_de", blk.table.theta)
            for i, blocks in enumerate(self.iters)
            for j, blk in enumerate(blocks)
        ]


class DepthNet:
    """Full model: backbone pyramid -> fused neck feature -> iterative head."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        init = Initializer(np.random.default_rng(seed), dtype=dtype)
        self.backbone = Backbone(init, cfg)
        self.neck = Neck(init, cfg)
        self.head = Head(init, cfg)

    def forward(self, image) -> tuple[list[Tensor], Tensor]:
        """Returns ([D_0 .. D_K] at 1/4 scale, final map resized to H x W)."""
        if not isinstance(image, Tensor):
            image = Tensor(image)
        if image.data.shape[:2] != tuple(self.cfg.image_hw):
            raise UsageError(
                f"input {image.data.shape[:2]} does not match configured size {self.cfg.image_hw}"
            )
        h, w, _ = image.data.shape
        pyramid = self.backbone(image)
        feature = self.neck(pyramid)
        maps = [self.head.initial_depth(feature)]
        for i in range(self.cfg.head_iterations):
            feature, nxt = self.head.iteration(i, feature, maps[-1])
            maps.append(nxt)
        for m in maps:
            if not np.all(np.isfinite(m.data)):
                raise UsageError("non-finite intermediate depth map")
        final = T.bilinear_resize(maps[-1], h, w)
        return maps, final

    def set_training(self, training: bool):
        for _, bn in self._bns():
            bn.training = training

    def _bns(self):
        return [(f"neck.{n}", bn) for n, bn in self.neck.bns()]

    def named_parameters(self):
        out = []
        out.extend(collect_params("backbone", self.backbone.params()))
        out.extend(collect_params("neck", self.neck.params()))
        out.extend(collect_params("head", self.head.params()))
        return out

    def theta_parameters(self):
        return [(f"head.{n}", t) for n, t in self.head.theta_params()]

    def state_dict(self):
        out = [(n, p.data) for n, p in self.named_parameters()]
        for name, bn in self._bns():
            out.append((f"{name}.running_mean", bn.running_mean))
            out.append((f"{name}.running_var", bn.running_var))
        return out

    def load_state_dict(self, state: dict):
        params = dict(self.named_parameters())
        buffers = {}
        for name, bn in self._bns():
            buffers[f"{name}.running_mean"] = ("running_mean", bn)
            buffers[f"{name}.running_var"] = ("running_var", bn)
        missing = (set(params) | set(buffers)) - set(state)
        extra = set(state) - (set(params) | set(buffers))
        if missing or extra:
            raise UsageError(f"checkpoint/model mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, arr in state.items():
            if name in params:
                p = params[name]
                if tuple(arr.shape) != tuple(p.data.shape):
                    raise UsageError(f"shape mismatch for {name}: checkpoint {arr.shape} vs model {p.data.shape}")
                p.data = arr.astype(p.data.dtype)
            else:
                attr, bn = buffers[name]
                current = getattr(bn, attr)
                if tuple(arr.shape) != tuple(current.shape):
                    raise UsageError(f"shape mismatch for {name}: checkpoint {arr.shape} vs model {current.shape}")
                setattr(bn, attr, arr.astype(current.dtype))
