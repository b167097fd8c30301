"""Depth rasters with validity masks, and label projection to 1/4 scale."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass
class DepthMap:
    """Dense or sparse depth raster; invalid pixels never enter losses/metrics."""

    values: np.ndarray  # (H, W) meters
    valid: np.ndarray  # (H, W) bool

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.dtype.kind != "f":
            self.values = self.values.astype(np.float32)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.shape != self.valid.shape:
            raise DataError(f"values {self.values.shape} vs mask {self.valid.shape}")

    @classmethod
    def dense(cls, values):
        values = np.asarray(values)
        return cls(values, np.ones(values.shape, dtype=bool))

    @property
    def num_valid(self) -> int:
        return int(self.valid.sum())


def _cell_priority(factor: int) -> np.ndarray:
    """Offsets within a factor x factor cell ordered by distance to its center."""
    ys, xs = np.meshgrid(np.arange(factor), np.arange(factor), indexing="ij")
    center = (factor - 1) / 2.0
    d2 = (ys - center) ** 2 + (xs - center) ** 2
    order = np.argsort(d2.reshape(-1), kind="stable")
    return order


def project_labels(gt: DepthMap, factor: int = 4) -> DepthMap:
    """Project sparse labels onto the H/factor x W/factor grid.

    A cell is valid iff it contains a valid source pixel; its value is the
    valid pixel nearest the cell center (row-major tie-break).
    """
    h, w = gt.values.shape
    if h % factor or w % factor:
        raise DataError(f"raster {h}x{w} not divisible by projection factor {factor}")
    hh, ww = h // factor, w // factor
    vals = gt.values.reshape(hh, factor, ww, factor).transpose(0, 2, 1, 3).reshape(hh, ww, factor * factor)
    mask = gt.valid.reshape(hh, factor, ww, factor).transpose(0, 2, 1, 3).reshape(hh, ww, factor * factor)
    order = _cell_priority(factor)
    vals = vals[:, :, order]
    mask = mask[:, :, order]
    first = np.argmax(mask, axis=2)
    cell_valid = mask.any(axis=2)
    picked = np.take_along_axis(vals, first[..., None], axis=2)[..., 0]
    out_vals = np.where(cell_valid, picked, 0.0).astype(gt.values.dtype)
    return DepthMap(out_vals, cell_valid)
