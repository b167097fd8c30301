"""Depth-relative attention bias: uniform binning, pairwise bin differences,
and lookups into a learnable per-head embedding table.

The depth raster entering this path is always detached: binning and table
indexing are piecewise-constant in depth, so no gradient flows back into the
depth map here. Gradients do flow into the embedding table via scatter-add.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, UsageError
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BinConfig:
    d_min: float
    d_max: float
    num_bins: int

    def __post_init__(self):
        if self.num_bins < 2:
            raise ConfigError(f"need at least 2 bins, got {self.num_bins}")
        if not self.d_max > self.d_min:
            raise ConfigError(f"d_max {self.d_max} must exceed d_min {self.d_min}")

    @property
    def num_relative(self):
        """Distinct relative-depth classes: 2*num_bins - 1."""
        return 2 * self.num_bins - 1


def discretize_depth(values: np.ndarray, cfg: BinConfig) -> np.ndarray:
    """Uniform binning of the [d_min, d_max] range into num_bins classes.

    bin(d) = clamp(floor((d - d_min) / (d_max - d_min) * num_bins), 0, num_bins-1).
    Values outside the range clamp into the boundary bins.
    """
    values = np.asarray(values)
    if not np.all(np.isfinite(values)):
        raise UsageError("depth values must be finite")
    scaled = (values - cfg.d_min) / (cfg.d_max - cfg.d_min) * cfg.num_bins
    return np.clip(np.floor(scaled), 0, cfg.num_bins - 1).astype(np.int64)


def relative_index(bin_p, bin_q, num_bins: int):
    """Table row for a pair of bins: (bin_p - bin_q) + (num_bins - 1).

    The raw signed difference spans [-(num_bins-1), num_bins-1]; the offset
    maps it onto rows [0, 2*num_bins-2].
    """
    bp = np.asarray(bin_p)
    bq = np.asarray(bin_q)
    if np.any(bp < 0) or np.any(bp > num_bins - 1) or np.any(bq < 0) or np.any(bq > num_bins - 1):
        raise UsageError(f"bins out of range [0, {num_bins - 1}]")
    return bp - bq + (num_bins - 1)


class BiasEmbeddingTable:
    """The learnable (2*num_bins-1) x num_heads bias table of one attention block."""

    def __init__(self, init, cfg: BinConfig, num_heads: int):
        self.cfg = cfg
        self.num_heads = num_heads
        self.theta = init.zeros((cfg.num_relative, num_heads))

    def params(self):
        return [("theta_de", self.theta)]


def build_bias(window_bins: np.ndarray, table: BiasEmbeddingTable) -> Tensor:
    """Bias tensor for windowed attention from discretized depth bins.

    ``window_bins`` is (num_windows, n) or (n,) integer bins; the result is
    (num_windows, heads, n, n) or (heads, n, n). Entry [.., h, p, q] is
    theta[(bin_p - bin_q) + num_bins - 1, h]: it depends only on the pairwise
    bin difference, never on image content.
    """
    bins = np.asarray(window_bins, dtype=np.int64)
    single = bins.ndim == 1
    if single:
        bins = bins[None, :]
    nw, n = bins.shape
    rows = relative_index(bins[:, :, None], bins[:, None, :], table.cfg.num_bins)
    if log.isEnabledFor(logging.DEBUG):
        raw = rows - (table.cfg.num_bins - 1)  # signed difference before the row offset
        log.debug("raw relative depths in [%d, %d] over %d windows", raw.min(), raw.max(), nw)
    gathered = T.index_select(table.theta, rows.reshape(-1))
    bias = T.reshape(gathered, (nw, n, n, table.num_heads))
    bias = T.transpose(bias, (0, 3, 1, 2))
    if single:
        bias = T.reshape(bias, (table.num_heads, n, n))
    return bias
