"""Scale-invariant log-depth training loss over valid pixels.

Two normalizations of the coupling term are supported:

  printed:       alpha * sqrt( mean(h^2) - (lam / T) * (sum h)^2 )
  conventional:  alpha * sqrt( mean(h^2) - lam * mean(h)^2 )

with h = log(gt) - log(pred) over the T valid pixels. The printed form's
coupling term grows with T, so for correlated residuals its radicand goes
negative; it is clamped at zero (with a warning) and contributes no
gradient there. The conventional form is the usual trainable objective.
"""

from __future__ import annotations

import logging

import numpy as np

from . import tensor as T
from .depth import DepthMap
from .errors import DataError, UsageError
from .tensor import Tensor

log = logging.getLogger(__name__)

LOSS_FORMS = ("printed", "conventional")

_clamp_warned = False


def si_loss(pred: Tensor, gt: DepthMap, lam: float = 0.85, alpha: float = 10.0,
            form: str = "printed") -> Tensor:
    """Scale-invariant loss of one predicted map against sparse labels."""
    if form not in LOSS_FORMS:
        raise UsageError(f"loss form must be one of {LOSS_FORMS}, got {form!r}")
    if pred.data.shape != gt.values.shape:
        raise UsageError(f"prediction {pred.data.shape} vs labels {gt.values.shape}")
    t_count = gt.num_valid
    if t_count == 0:
        raise DataError("loss undefined: no valid label pixels")
    gt_sel = gt.values[gt.valid]
    if np.any(gt_sel <= 0):
        raise DataError("non-positive ground-truth depth at a valid pixel")
    if np.any(pred.data[gt.valid] <= 0):
        raise DataError("non-positive predicted depth at a valid pixel")

    pred_sel = T.masked_select(pred, gt.valid)
    h = T.sub(Tensor(np.log(gt_sel.astype(pred.data.dtype))), T.tlog(pred_sel))
    mean_sq = T.tmean(T.mul(h, h))
    total = T.tsum(h)
    sq_total = T.mul(total, total)
    if form == "printed":
        coupling = T.mul(sq_total, lam / t_count)
    else:
        coupling = T.mul(sq_total, lam / (t_count * t_count))
    radicand = T.sub(mean_sq, coupling)
    if radicand.data < 0:
        global _clamp_warned
        if not _clamp_warned:
            log.warning("si_loss radicand negative (%.3g); clamping to 0. Further clamps logged at DEBUG.",
                        float(radicand.data))
            _clamp_warned = True
        else:
            log.debug("si_loss radicand negative (%.3g); clamped", float(radicand.data))
    return T.mul(T.tsqrt(radicand), alpha)


def total_loss(maps, gt: DepthMap, lam: float = 0.85, alpha: float = 10.0,
               form: str = "printed"):
    """Mean of si_loss over all emitted depth maps.

    Returns (total, [per-map losses]).
    """
    if not maps:
        raise UsageError("need at least one depth map")
    per_map = [si_loss(m, gt, lam, alpha, form) for m in maps]
    acc = per_map[0]
    for piece in per_map[1:]:
        acc = T.add(acc, piece)
    return T.mul(acc, 1.0 / len(per_map)), per_map
