"""Standard depth-estimation metrics over valid pixels, plus a per-depth-range
RMSE breakdown. All computed in float64, vectorized; tests hold these against
naive per-pixel loops.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .depth import DepthMap
from .errors import DataError, UsageError

METRIC_FIELDS = ("abs_rel", "rmse", "rmse_log", "log10", "sq_rel", "silog", "d1", "d2", "d3")
CSV_HEADER = ",".join(METRIC_FIELDS)
RANGE_CSV_HEADER = "range_lo,range_hi,rmse,count"


@dataclass
class RangeBucket:
    lo: float
    hi: float
    rmse: float | None
    count: int


@dataclass
class MetricReport:
    abs_rel: float
    rmse: float
    rmse_log: float
    log10: float
    sq_rel: float
    silog: float
    d1: float
    d2: float
    d3: float
    per_range: list[RangeBucket] = field(default_factory=list)

    def csv_row(self) -> str:
        return ",".join(format(getattr(self, f), ".9g") for f in METRIC_FIELDS)

    def range_csv_rows(self):
        rows = []
        for b in self.per_range:
            rmse = format(b.rmse, ".9g") if b.rmse is not None else ""
            rows.append(f"{format(b.lo, '.9g')},{format(b.hi, '.9g')},{rmse},{b.count}")
        return rows


def metric_report(pred: np.ndarray, gt: DepthMap, range_edges=None) -> MetricReport:
    """Seven standard metrics of a dense prediction against sparse labels."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != gt.values.shape:
        raise UsageError(f"prediction {pred.shape} vs labels {gt.values.shape}")
    if gt.num_valid == 0:
        raise DataError("metrics undefined: no valid label pixels")
    p = pred[gt.valid]
    g = gt.values[gt.valid].astype(np.float64)
    if np.any(g <= 0):
        raise DataError("non-positive ground-truth depth at a valid pixel")
    if np.any(p <= 0):
        raise DataError("non-positive predicted depth at a valid pixel (log metrics undefined)")

    diff = p - g
    d_log = np.log(p) - np.log(g)
    ratio = np.maximum(p / g, g / p)
    n = p.size
    report = MetricReport(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        rmse=float(np.sqrt(np.mean(diff**2))),
        rmse_log=float(np.sqrt(np.mean(d_log**2))),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(g)))),
        sq_rel=float(np.mean(diff**2 / g)),
        silog=float(np.mean(d_log**2) - np.sum(d_log) ** 2 / n**2),
        d1=float(np.mean(ratio < 1.25)),
        d2=float(np.mean(ratio < 1.25**2)),
        d3=float(np.mean(ratio < 1.25**3)),
    )
    if range_edges is not None:
        report.per_range = per_range_rmse(pred, gt, range_edges)
    return report


def per_range_rmse(pred: np.ndarray, gt: DepthMap, edges) -> list[RangeBucket]:
    """RMSE per ground-truth depth bucket [edge_i, edge_{i+1}).

    Empty buckets report count 0 and no rmse value.
    """
    edges = [float(e) for e in edges]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise UsageError("range edges must be strictly increasing with at least two entries")
    pred = np.asarray(pred, dtype=np.float64)
    p = pred[gt.valid]
    g = gt.values[gt.valid].astype(np.float64)
    out = []
    for lo, hi in zip(edges, edges[1:]):
        sel = (g >= lo) & (g < hi)
        count = int(sel.sum())
        rmse = float(np.sqrt(np.mean((p[sel] - g[sel]) ** 2))) if count else None
        out.append(RangeBucket(lo, hi, rmse, count))
    return out


class RangeAccumulator:
    """Pools squared errors per bucket across many samples."""

    def __init__(self, edges):
        self.edges = [float(e) for e in edges]
        if len(self.edges) < 2 or any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise UsageError("range edges must be strictly increasing with at least two entries")
        n = len(self.edges) - 1
        self.sq_sum = np.zeros(n, dtype=np.float64)
        self.count = np.zeros(n, dtype=np.int64)

    def add(self, pred: np.ndarray, gt: DepthMap):
        p = np.asarray(pred, dtype=np.float64)[gt.valid]
        g = gt.values[gt.valid].astype(np.float64)
        for i, (lo, hi) in enumerate(zip(self.edges, self.edges[1:])):
            sel = (g >= lo) & (g < hi)
            self.sq_sum[i] += float(np.sum((p[sel] - g[sel]) ** 2))
            self.count[i] += int(sel.sum())

    def buckets(self) -> list[RangeBucket]:
        out = []
        for i, (lo, hi) in enumerate(zip(self.edges, self.edges[1:])):
            c = int(self.count[i])
            rmse = float(np.sqrt(self.sq_sum[i] / c)) if c else None
            out.append(RangeBucket(lo, hi, rmse, c))
        return out


def mean_reports(reports: list[MetricReport]) -> MetricReport:
    """Per-image metric averages (the usual dataset-level protocol)."""
    if not reports:
        raise UsageError("no reports to average")
    return MetricReport(**{f: float(np.mean([getattr(r, f) for r in reports])) for f in METRIC_FIELDS})


def band_rmse(pred: np.ndarray, gt: DepthMap, lo: float, hi: float,
              lo_inclusive=True, hi_inclusive=True):
    """RMSE over valid pixels whose ground truth lies in the given band."""
    p = np.asarray(pred, dtype=np.float64)[gt.valid]
    g = gt.values[gt.valid].astype(np.float64)
    sel = (g >= lo if lo_inclusive else g > lo) & (g <= hi if hi_inclusive else g < hi)
    count = int(sel.sum())
    if count == 0:
        return None, 0
    return float(np.sqrt(np.mean((p[sel] - g[sel]) ** 2))), count
