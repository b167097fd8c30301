"""Dataset handling: sample container, label sparsification, range clipping,
augmentation, and bit-exact on-disk layout.

A sample on disk is a directory with ``rgb.rdt``, ``depth.rdt`` and
``meta.json``. The depth file stores labelled pixels only; invalid pixels are
written as 0.0 and any non-positive value reads back as invalid. A dataset
directory carries ``manifest.json`` whose seeds regenerate every sample
bit-identically.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .depth import DepthMap
from .errors import DataError, FormatError, UsageError
from .scenes import GENERATOR_VERSION, SceneConfig, generate_scene
from .tensor_io import read_tensor, write_tensor

AUGMENT_FLAGS = ("flip", "brightness", "color")


@dataclass
class SceneSample:
    rgb: np.ndarray  # (H, W, 3) float32 in [0, 1]
    depth: np.ndarray  # (H, W) float32 meters; 0 where unlabelled-on-disk
    valid: np.ndarray  # (H, W) bool label mask
    seed: int
    descriptor: list = field(default_factory=list)

    def gt(self) -> DepthMap:
        return DepthMap(self.depth, self.valid)

    def copy(self) -> "SceneSample":
        return SceneSample(self.rgb.copy(), self.depth.copy(), self.valid.copy(), self.seed, self.descriptor)


@dataclass
class DatasetManifest:
    count: int
    height: int
    width: int
    depth_min: float
    depth_max: float
    sparsity: float
    d_clip: float | None
    generator_version: int
    scene: dict
    samples: list  # [{"name": ..., "seed": ..., "mask_seed": ...}]

    def to_dict(self):
        return {
            "count": self.count,
            "height": self.height,
            "width": self.width,
            "depth_min": self.depth_min,
            "depth_max": self.depth_max,
            "sparsity": self.sparsity,
            "d_clip": self.d_clip,
            "generator_version": self.generator_version,
            "scene": self.scene,
            "samples": self.samples,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def make_sample(seed: int, cfg: SceneConfig) -> SceneSample:
    rgb, depth, descriptor = generate_scene(seed, cfg)
    return SceneSample(rgb, depth, np.ones(depth.shape, dtype=bool), seed, descriptor)


def sparsify_labels(sample: SceneSample, rate: float, seed: int) -> SceneSample:
    """Keep exactly round(rate * H * W) labels, drawn uniformly without replacement."""
    if not 0 < rate <= 1:
        raise UsageError(f"sparsity rate must be in (0, 1], got {rate}")
    h, w = sample.depth.shape
    k = int(round(rate * h * w))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(h * w, size=k, replace=False)
    mask = np.zeros(h * w, dtype=bool)
    mask[chosen] = True
    out = sample.copy()
    out.valid = mask.reshape(h, w)
    return out


def clip_labels(sample: SceneSample, d_clip: float, d_min: float, d_max: float) -> SceneSample:
    """Invalidate labels strictly above d_clip; depth values stay untouched."""
    if not d_min < d_clip <= d_max:
        raise UsageError(f"d_clip {d_clip} must lie in ({d_min}, {d_max}]")
    out = sample.copy()
    out.valid = sample.valid & ~(sample.depth > d_clip)
    return out


def flip_sample(sample: SceneSample) -> SceneSample:
    out = sample.copy()
    out.rgb = np.ascontiguousarray(sample.rgb[:, ::-1])
    out.depth = np.ascontiguousarray(sample.depth[:, ::-1])
    out.valid = np.ascontiguousarray(sample.valid[:, ::-1])
    return out


def apply_brightness(sample: SceneSample, factor: float) -> SceneSample:
    out = sample.copy()
    out.rgb = np.clip(sample.rgb * np.float32(factor), 0.0, 1.0)
    return out


def apply_color(sample: SceneSample, factors) -> SceneSample:
    out = sample.copy()
    out.rgb = np.clip(sample.rgb * np.asarray(factors, dtype=np.float32)[None, None, :], 0.0, 1.0)
    return out


def augment_sample(sample: SceneSample, seed: int, flags=AUGMENT_FLAGS) -> SceneSample:
    """Random flip / brightness / color; photometric ops never touch depth."""
    unknown = set(flags) - set(AUGMENT_FLAGS)
    if unknown:
        raise UsageError(f"unknown augmentation flags {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    out = sample
    if "flip" in flags and rng.random() < 0.5:
        out = flip_sample(out)
    if "brightness" in flags:
        out = apply_brightness(out, float(rng.uniform(0.8, 1.2)))
    if "color" in flags:
        out = apply_color(out, rng.uniform(0.9, 1.1, 3))
    return out


# -- on-disk layout -------------------------------------------------------------


def write_sample(path: str, sample: SceneSample):
    os.makedirs(path, exist_ok=True)
    write_tensor(os.path.join(path, "rgb.rdt"), sample.rgb)
    depth = np.where(sample.valid, sample.depth, np.float32(0.0))
    write_tensor(os.path.join(path, "depth.rdt"), depth)
    meta = {"seed": sample.seed, "descriptor": sample.descriptor}
    with open(os.path.join(path, "meta.json"), "w") as f:
        json.dump(meta, f, sort_keys=True)


def read_sample(path: str) -> SceneSample:
    rgb = read_tensor(os.path.join(path, "rgb.rdt"))
    depth = read_tensor(os.path.join(path, "depth.rdt"))
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise FormatError(f"{path}/rgb.rdt: expected HxWx3, got {rgb.shape}")
    if depth.shape != rgb.shape[:2]:
        raise FormatError(f"{path}/depth.rdt: depth {depth.shape} does not match rgb {rgb.shape[:2]}")
    try:
        with open(os.path.join(path, "meta.json")) as f:
            meta = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}/meta.json: {e}") from None
    valid = depth > 0
    return SceneSample(rgb, depth, valid, int(meta["seed"]), meta.get("descriptor", []))


def _sample_name(i: int) -> str:
    return f"s{i:05d}"


def generate_dataset(out_dir: str, count: int, master_seed: int, cfg: SceneConfig,
                     sparsity: float = 0.15) -> DatasetManifest:
    """Write ``count`` samples plus a manifest that can regenerate them."""
    os.makedirs(out_dir, exist_ok=True)
    ss = np.random.SeedSequence(master_seed)
    entries = []
    for i, child in enumerate(ss.spawn(count)):
        scene_seed, mask_seed = (int(s) for s in child.generate_state(2))
        sample = make_sample(scene_seed, cfg)
        sample = sparsify_labels(sample, sparsity, mask_seed)
        name = _sample_name(i)
        write_sample(os.path.join(out_dir, name), sample)
        entries.append({"name": name, "seed": scene_seed, "mask_seed": mask_seed})
    manifest = DatasetManifest(
        count=count,
        height=cfg.height,
        width=cfg.width,
        depth_min=cfg.depth_min,
        depth_max=cfg.depth_max,
        sparsity=sparsity,
        d_clip=None,
        generator_version=GENERATOR_VERSION,
        scene=cfg.to_dict(),
        samples=entries,
    )
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest.to_dict(), f, indent=1, sort_keys=True)
    return manifest


def load_manifest(data_dir: str) -> DatasetManifest:
    path = os.path.join(data_dir, "manifest.json")
    if not os.path.exists(path):
        raise DataError(f"no manifest.json in {data_dir}")
    with open(path) as f:
        return DatasetManifest.from_dict(json.load(f))


def load_dataset(data_dir: str):
    """Returns (manifest, [SceneSample...]) in manifest order."""
    manifest = load_manifest(data_dir)
    samples = [read_sample(os.path.join(data_dir, e["name"])) for e in manifest.samples]
    return manifest, samples


def regenerate_sample(entry: dict, manifest: DatasetManifest) -> SceneSample:
    """Rebuild one sample from its manifest seeds (bit-identical to disk)."""
    cfg = SceneConfig.from_dict(manifest.scene)
    sample = make_sample(int(entry["seed"]), cfg)
    return sparsify_labels(sample, manifest.sparsity, int(entry["mask_seed"]))
