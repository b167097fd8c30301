"""Depth estimation with a depth-relative attention bias, desk scale.

Framework-free: a numpy-backed tensor engine with taped reverse-mode
differentiation underpins the model, losses, and training harness.
"""

from .attention import AttentionConfig, biased_attention, relative_position_index, window_partition, window_unpartition
from .depth import DepthMap, project_labels
from .errors import ConfigError, DataError, FormatError, NumericalError, RedtError, UsageError
from .gradcheck import finite_difference_gradient
from .losses import si_loss, total_loss
from .metrics import MetricReport, metric_report, per_range_rmse
from .model import DepthNet, ModelConfig
from .optim import AdamW, LRSchedule, clip_global_norm
from .relbias import BiasEmbeddingTable, BinConfig, build_bias, discretize_depth, relative_index
from .tensor import Tensor, no_grad, softmax_rows
from .train import RunConfig

__all__ = [
    "AdamW",
    "AttentionConfig",
    "BiasEmbeddingTable",
    "BinConfig",
    "ConfigError",
    "DataError",
    "DepthMap",
    "DepthNet",
    "FormatError",
    "LRSchedule",
    "MetricReport",
    "ModelConfig",
    "NumericalError",
    "RedtError",
    "RunConfig",
    "Tensor",
    "UsageError",
    "biased_attention",
    "build_bias",
    "clip_global_norm",
    "discretize_depth",
    "finite_difference_gradient",
    "metric_report",
    "no_grad",
    "per_range_rmse",
    "project_labels",
    "relative_index",
    "relative_position_index",
    "si_loss",
    "softmax_rows",
    "total_loss",
    "window_partition",
    "window_unpartition",
]
