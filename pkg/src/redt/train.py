"""Training loop (gradient accumulation + clipping), evaluation, ablation."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import AUGMENT_FLAGS, augment_sample, clip_labels, load_dataset
from .depth import project_labels
from .errors import ConfigError, NumericalError
from .losses import LOSS_FORMS, total_loss
from .metrics import MetricReport, RangeAccumulator, mean_reports, metric_report
from .model import DepthNet, ModelConfig
from .optim import AdamW, LRSchedule, clip_global_norm
from .tensor_io import read_checkpoint, write_checkpoint

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    data: str = "data/train"
    model: ModelConfig = field(default_factory=ModelConfig)
    loss_lambda: float = 0.85
    loss_alpha: float = 10.0
    loss_form: str = "conventional"
    schedule: LRSchedule = field(default_factory=LRSchedule)
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.1
    adam_eps: float = 1e-8
    clip_norm: float = 0.1
    batch_size: int = 4
    accum_steps: int = 2
    total_iters: int = 2000
    seed: int = 7
    rel_bias_enabled: bool = True
    d_clip: float | None = None
    augment: tuple = AUGMENT_FLAGS

    def __post_init__(self):
        if self.loss_form not in LOSS_FORMS:
            raise ConfigError(f"loss_form must be one of {LOSS_FORMS}")
        if self.batch_size < 1 or self.accum_steps < 1 or self.total_iters < 1:
            raise ConfigError("batch_size, accum_steps and total_iters must be positive")
        if self.schedule.total_iters != self.total_iters:
            self.schedule = LRSchedule(
                self.schedule.lr_start,
                self.schedule.lr_max,
                self.schedule.lr_end,
                self.total_iters,
                self.schedule.warmup_fraction,
            )

    def to_dict(self):
        d = {
            "data": self.data,
            "model": self.model.to_dict(),
            "loss_lambda": self.loss_lambda,
            "loss_alpha": self.loss_alpha,
            "loss_form": self.loss_form,
            "schedule": {
                "lr_start": self.schedule.lr_start,
                "lr_max": self.schedule.lr_max,
                "lr_end": self.schedule.lr_end,
                "total_iters": self.schedule.total_iters,
                "warmup_fraction": self.schedule.warmup_fraction,
            },
            "betas": list(self.betas),
            "weight_decay": self.weight_decay,
            "adam_eps": self.adam_eps,
            "clip_norm": self.clip_norm,
            "batch_size": self.batch_size,
            "accum_steps": self.accum_steps,
            "total_iters": self.total_iters,
            "seed": self.seed,
            "rel_bias_enabled": self.rel_bias_enabled,
            "d_clip": self.d_clip,
            "augment": list(self.augment),
        }
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        if "schedule" in d:
            d["schedule"] = LRSchedule(**d["schedule"])
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        if "augment" in d:
            d["augment"] = tuple(d["augment"])
        return cls(**d)


@dataclass
class ExperimentResult:
    config: dict
    report: MetricReport
    loss_curve: list
    per_map_rmse: list
    wall_clock: float


def _prepare_train_sample(sample, cfg: RunConfig, aug_seed: int):
    if cfg.augment:
        sample = augment_sample(sample, aug_seed, cfg.augment)
    if cfg.d_clip is not None:
        sample = clip_labels(sample, cfg.d_clip, cfg.model.depth_min, cfg.model.depth_max)
    return sample


def build_model(cfg: RunConfig) -> DepthNet:
    return DepthNet(cfg.model, seed=cfg.seed)


def trainable_parameters(model: DepthNet, rel_bias_enabled: bool):
    """All parameters; with the bias disabled the (zero-initialized) embedding
    tables are excluded, freezing them at exactly zero."""
    named = model.named_parameters()
    if rel_bias_enabled:
        return named
    frozen = {id(t) for _, t in model.theta_parameters()}
    return [(n, p) for n, p in named if id(p) not in frozen]


def train(cfg: RunConfig, out_dir: str) -> dict:
    """Run the optimization loop; writes checkpoint, loss log, resolved config."""
    os.makedirs(out_dir, exist_ok=True)
    manifest, samples = load_dataset(cfg.data)
    if (manifest.height, manifest.width) != tuple(cfg.model.image_hw):
        raise ConfigError(
            f"dataset {manifest.height}x{manifest.width} does not match model input {cfg.model.image_hw}"
        )
    model = build_model(cfg)
    model.set_training(True)
    named = trainable_parameters(model, cfg.rel_bias_enabled)
    opt = AdamW([p for _, p in named], betas=cfg.betas, eps=cfg.adam_eps, weight_decay=cfg.weight_decay)

    order_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    order = []

    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(cfg.to_dict(), f, indent=1, sort_keys=True)
    log.info("training: %d iters, loss_form=%s, rel_bias=%s, d_clip=%s",
             cfg.total_iters, cfg.loss_form, cfg.rel_bias_enabled, cfg.d_clip)

    loss_rows = []
    start = time.time()
    n_maps = cfg.model.head_iterations + 1
    try:
        for it in range(cfg.total_iters):
            lr = cfg.schedule.lr_at(it)
            step_loss = 0.0
            step_maps = np.zeros(n_maps)
            for micro in range(cfg.accum_steps):
                batch_ids = []
                for _ in range(cfg.batch_size):
                    if not order:
                        order = list(order_rng.permutation(len(samples)))
                    batch_ids.append(order.pop())
                per_sample = []
                for slot, si in enumerate(batch_ids):
                    aug_seed = int(np.random.SeedSequence([cfg.seed, 2, it, micro, slot]).generate_state(1)[0])
                    sample = _prepare_train_sample(samples[si], cfg, aug_seed)
                    gt_q = project_labels(sample.gt())
                    if gt_q.num_valid == 0:
                        continue
                    maps, _ = model.forward(sample.rgb)
                    loss, per_map = total_loss(maps, gt_q, cfg.loss_lambda, cfg.loss_alpha, cfg.loss_form)
                    per_sample.append((loss, per_map))
                if not per_sample:
                    raise NumericalError("empty micro-batch: all samples lost their labels")
                micro_loss = per_sample[0][0]
                for l, _ in per_sample[1:]:
                    micro_loss = T.add(micro_loss, l)
                micro_loss = T.mul(micro_loss, 1.0 / len(per_sample))
                if not np.isfinite(micro_loss.data):
                    _save(model, out_dir)
                    raise NumericalError(f"non-finite loss at iteration {it}")
                step_loss += float(micro_loss.data) / cfg.accum_steps
                for _, per_map in per_sample:
                    for k, lk in enumerate(per_map):
                        step_maps[k] += float(lk.data) / (len(per_sample) * cfg.accum_steps)
                T.mul(micro_loss, 1.0 / cfg.accum_steps).backward()
            norm = clip_global_norm(opt.grads(), cfg.clip_norm)
            opt.step(lr)
            opt.zero_grad()
            loss_rows.append((it, lr, step_loss, norm, list(step_maps)))
            if it % 100 == 0 or it == cfg.total_iters - 1:
                log.info("iter %d lr %.3g loss %.5f grad_norm %.4f", it, lr, step_loss, norm)
    finally:
        _write_loss_log(os.path.join(out_dir, "loss_log.csv"), loss_rows, n_maps)
    _save(model, out_dir)
    return {"model": model, "loss_rows": loss_rows, "wall_clock": time.time() - start}


def _save(model: DepthNet, out_dir: str):
    write_checkpoint(os.path.join(out_dir, "model.ckpt"), model.state_dict())


def _write_loss_log(path, rows, n_maps):
    with open(path, "w") as f:
        heads = ",".join(f"l{k}" for k in range(n_maps))
        f.write(f"iter,lr,l_total,grad_norm,{heads}\n")
        for it, lr, loss, norm, per_map in rows:
            pm = ",".join(format(v, ".9g") for v in per_map)
            f.write(f"{it},{format(lr, '.9g')},{format(loss, '.9g')},{format(norm, '.9g')},{pm}\n")


def load_model(ckpt_path: str, model_cfg: ModelConfig, seed: int = 0) -> DepthNet:
    model = DepthNet(model_cfg, seed=seed)
    model.load_state_dict(read_checkpoint(ckpt_path))
    return model


def evaluate(model: DepthNet, data_dir: str, range_edges=None):
    """Full-range evaluation: per-image metric means, pooled per-range RMSE,
    and per-iteration RMSE of every intermediate map at 1/4 scale."""
    manifest, samples = load_dataset(data_dir)
    model.set_training(False)
    reports = []
    n_maps = model.cfg.head_iterations + 1
    sq = np.zeros(n_maps)
    counts = np.zeros(n_maps, dtype=np.int64)
    acc = RangeAccumulator(range_edges) if range_edges else None
    with T.no_grad():
        for sample in samples:
            gt_full = sample.gt()
            maps, final = model.forward(sample.rgb)
            reports.append(metric_report(final.data, gt_full))
            if acc is not None:
                acc.add(final.data, gt_full)
            gt_q = project_labels(gt_full)
            if gt_q.num_valid:
                for k, m in enumerate(maps):
                    err = (m.data.astype(np.float64) - gt_q.values)[gt_q.valid]
                    sq[k] += float(np.sum(err**2))
                    counts[k] += err.size
    report = mean_reports(reports)
    if acc is not None:
        report.per_range = acc.buckets()
    per_map = [float(np.sqrt(s / c)) if c else None for s, c in zip(sq, counts)]
    return report, per_map


def evaluate_bands(model: DepthNet, data_dir: str, d_clip: float):
    """Pooled RMSE inside [d_min, d_clip] and outside (d_clip, d_max]."""
    manifest, samples = load_dataset(data_dir)
    model.set_training(False)
    in_sq = in_n = out_sq = out_n = 0.0
    with T.no_grad():
        for sample in samples:
            gt = sample.gt()
            _, final = model.forward(sample.rgb)
            p = final.data.astype(np.float64)[gt.valid]
            g = gt.values[gt.valid].astype(np.float64)
            inside = g <= d_clip
            in_sq += float(np.sum((p[inside] - g[inside]) ** 2))
            in_n += int(inside.sum())
            out_sq += float(np.sum((p[~inside] - g[~inside]) ** 2))
            out_n += int((~inside).sum())
    in_rmse = float(np.sqrt(in_sq / in_n)) if in_n else None
    out_rmse = float(np.sqrt(out_sq / out_n)) if out_n else None
    return in_rmse, out_rmse
