"""Procedural scenes with exact ray-cast depth.

A fixed pinhole camera looks down +z (image v axis = world y, pointing down).
Scenes compose a ground plane, a full-extent backdrop wall, optional finite
tilted walls, and axis-aligned boxes. Every surface draws its texture
independently of its geometry, so image gradients and depth gradients are
decorrelated by construction: flat-depth regions can be busy (checkerboard
walls) and smooth-texture regions can span large depth (painted floor).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, UsageError

GENERATOR_VERSION = 1

_TEXTURES = ("flat", "checker", "stripes", "gradient")


@dataclass
class SceneConfig:
    height: int = 64
    width: int = 64
    depth_min: float = 1.0
    depth_max: float = 20.0
    boxes: tuple = (1, 4)
    walls: tuple = (1, 2)
    ramps: tuple = (1, 2)

    def __post_init__(self):
        if self.height % 32 or self.width % 32:
            raise UsageError(f"image size {self.height}x{self.width} must be divisible by 32")
        if not self.depth_max > self.depth_min > 0:
            raise UsageError("need depth_max > depth_min > 0")

    def to_dict(self):
        return {
            "height": self.height,
            "width": self.width,
            "depth_min": self.depth_min,
            "depth_max": self.depth_max,
            "boxes": list(self.boxes),
            "walls": list(self.walls),
            "ramps": list(self.ramps),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["boxes"] = tuple(d.get("boxes", (1, 4)))
        d["walls"] = tuple(d.get("walls", (1, 2)))
        d["ramps"] = tuple(d.get("ramps", (1, 2)))
        return cls(**d)


def _rays(cfg: SceneConfig):
    f = float(cfg.height)
    cy = (cfg.height - 1) / 2.0
    cx = (cfg.width - 1) / 2.0
    vs, us = np.meshgrid(np.arange(cfg.height), np.arange(cfg.width), indexing="ij")
    dx = (us - cx) / f
    dy = (vs - cy) / f
    return dx, dy


def _texture_color(tex: dict, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    c0 = np.asarray(tex["c0"], dtype=np.float64)
    c1 = np.asarray(tex["c1"], dtype=np.float64)
    s = tex["scale"]
    kind = tex["kind"]
    if kind == "flat":
        return np.broadcast_to(c0, u.shape + (3,)).copy()
    if kind == "checker":
        idx = ((np.floor(u / s) + np.floor(v / s)) % 2).astype(bool)
    elif kind == "stripes":
        coord = u if tex["axis"] == 0 else v
        idx = (np.floor(coord / s) % 2).astype(bool)
    else:  # gradient: triangle wave along one axis
        coord = u if tex["axis"] == 0 else v
        tri = np.abs(2.0 * ((coord / (4.0 * s)) % 1.0) - 1.0)
        return c0[None, None] + (c1 - c0)[None, None] * tri[..., None]
    return np.where(idx[..., None], c1[None, None], c0[None, None])


def _random_texture(rng, kinds=_TEXTURES, weights=(0.15, 0.35, 0.3, 0.2)) -> dict:
    # weighted toward high-frequency patterns so busy-texture-on-smooth-depth
    # regions occur in most scenes
    kind = rng.choice(kinds, p=weights)
    return {
        "kind": str(kind),
        "scale": float(rng.uniform(0.3, 1.5)),
        "axis": int(rng.integers(2)),
        "c0": [float(c) for c in rng.uniform(0.05, 0.95, 3)],
        "c1": [float(c) for c in rng.uniform(0.05, 0.95, 3)],
    }


def _busy_texture(rng) -> dict:
    # checker or stripes: guarantees an RGB-busy, depth-smooth region
    return _random_texture(rng, kinds=("checker", "stripes"), weights=(0.5, 0.5))


def _floor_hit(surf, dx, dy):
    with np.errstate(divide="ignore"):
        t = np.where(dy > 1e-6, surf["height"] / np.maximum(dy, 1e-12), np.inf)
    return t


def _wall_hit(surf, dx, dy):
    denom = 1.0 - surf["tilt_x"] * dx - surf["tilt_y"] * dy
    with np.errstate(divide="ignore"):
        t = np.where(denom > 1e-6, surf["z0"] / np.maximum(denom, 1e-12), np.inf)
    x = t * dx
    y = t * dy
    inside = (np.abs(x - surf["cx"]) <= surf["ex"]) & (np.abs(y - surf["cy"]) <= surf["ey"]) & (t > 0)
    return np.where(inside, t, np.inf)


def _box_hit(surf, dx, dy):
    # slab test against an axis-aligned box; rays start at the origin
    lo = np.array([surf["x0"], surf["y0"], surf["z0"]])
    hi = np.array([surf["x1"], surf["y1"], surf["z1"]])
    t_near = np.full(dx.shape, -np.inf)
    t_far = np.full(dx.shape, np.inf)
    for axis, d in enumerate((dx, dy, np.ones_like(dx))):
        with np.errstate(divide="ignore", invalid="ignore"):
            t0 = np.where(np.abs(d) > 1e-12, lo[axis] / np.where(np.abs(d) > 1e-12, d, 1.0), -np.inf)
            t1 = np.where(np.abs(d) > 1e-12, hi[axis] / np.where(np.abs(d) > 1e-12, d, 1.0), np.inf)
        near = np.minimum(t0, t1)
        far = np.maximum(t0, t1)
        # rays parallel to a slab hit only if the origin lies inside it
        parallel = np.abs(d) <= 1e-12
        origin_in = (lo[axis] <= 0) & (0 <= hi[axis])
        near = np.where(parallel, np.where(origin_in, -np.inf, np.inf), near)
        far = np.where(parallel, np.where(origin_in, np.inf, -np.inf), far)
        t_near = np.maximum(t_near, near)
        t_far = np.minimum(t_far, far)
    hit = (t_near <= t_far) & (t_near > 1e-6)
    return np.where(hit, t_near, np.inf)


_HITTERS = {"floor": _floor_hit, "wall": _wall_hit, "box": _box_hit}


def _surface_uv(surf, dx, dy, t):
    x = t * dx
    y = t * dy
    if surf["type"] == "floor":
        return x, t  # plan coordinates (x, z)
    return x, y


def render_scene(surfaces: list[dict], cfg: SceneConfig):
    """Exact depth + texture colors for a list of surface descriptors."""
    dx, dy = _rays(cfg)
    t_maps = np.stack([_HITTERS[s["type"]](s, dx, dy) for s in surfaces])
    winner = np.argmin(t_maps, axis=0)
    best = np.take_along_axis(t_maps, winner[None], axis=0)[0]
    no_hit = ~np.isfinite(best)
    depth = np.where(no_hit, cfg.depth_max, best)
    depth = np.minimum(depth, cfg.depth_max)
    if depth.min() < cfg.depth_min - 1e-6:
        raise DataError(f"scene produced depth {depth.min():.3f} below d_min {cfg.depth_min}")
    depth = np.maximum(depth, cfg.depth_min)

    rgb = np.full((cfg.height, cfg.width, 3), 0.5, dtype=np.float64)
    for i, surf in enumerate(surfaces):
        sel = (winner == i) & ~no_hit
        if not sel.any():
            continue
        u, v = _surface_uv(surf, dx, dy, depth)
        rgb[sel] = _texture_color(surf["texture"], u, v)[sel]
    return rgb.astype(np.float32), depth.astype(np.float32)


def build_scene(seed: int, cfg: SceneConfig) -> list[dict]:
    """Seeded surface placement; geometry and textures are drawn independently."""
    rng = np.random.default_rng(seed)
    d_span = cfg.depth_max - cfg.depth_min
    surfaces = []

    floor = {"type": "floor", "height": float(rng.uniform(1.2, 1.8)), "texture": _random_texture(rng)}
    surfaces.append(floor)

    n_walls = int(rng.integers(cfg.walls[0], cfg.walls[1] + 1))
    # backdrop depth overlaps the lower half of the range in some scenes, so
    # a deep backdrop is a moderate extrapolation of shallower labelled ones
    backdrop = {
        "type": "wall",
        "z0": float(cfg.depth_min + rng.uniform(0.45, 0.8) * d_span),
        "tilt_x": float(rng.uniform(-0.06, 0.06)),
        "tilt_y": float(rng.uniform(-0.06, 0.06)),
        "cx": 0.0,
        "cy": 0.0,
        "ex": 1e6,
        "ey": 1e6,
        "texture": _busy_texture(rng),
    }
    surfaces.append(backdrop)
    for _ in range(n_walls - 1):
        z0 = float(cfg.depth_min + rng.uniform(0.25, 0.6) * d_span)
        surfaces.append(
            {
                "type": "wall",
                "z0": z0,
                "tilt_x": float(rng.uniform(-0.08, 0.08)),
                "tilt_y": float(rng.uniform(-0.08, 0.08)),
                "cx": float(rng.uniform(-0.35, 0.35) * z0),
                "cy": float(rng.uniform(-0.6, 0.6)),
                "ex": float(rng.uniform(0.6, 2.5)),
                "ey": float(rng.uniform(0.5, 1.8)),
                "texture": _random_texture(rng),
            }
        )

    dxg, dyg = _rays(cfg)
    current = np.stack([_HITTERS[s["type"]](s, dxg, dyg) for s in surfaces]).min(axis=0)

    # ramps: large, strongly tilted walls whose visible depth sweeps a wide
    # band of the range, giving smooth surfaces that cross any clip threshold
    n_ramps = int(rng.integers(cfg.ramps[0], cfg.ramps[1] + 1))
    min_px = max(20, cfg.height * cfg.width // 50)
    for ramp_i in range(n_ramps):
        placed = False
        for _attempt in range(100):
            z0 = float(cfg.depth_min + rng.uniform(0.25, 0.6) * d_span)
            axis = int(rng.integers(2))
            tilt = float(rng.uniform(0.4, 0.9)) * (1 if rng.random() < 0.5 else -1)
            ramp = {
                "type": "wall",
                "z0": z0,
                "tilt_x": tilt if axis == 0 else float(rng.uniform(-0.1, 0.1)),
                "tilt_y": tilt if axis == 1 else float(rng.uniform(-0.1, 0.1)),
                "cx": float(rng.uniform(-0.25, 0.25) * z0),
                "cy": float(rng.uniform(-0.4, 0.8)),
                "ex": float(rng.uniform(3.0, 7.0)),
                "ey": float(rng.uniform(1.5, 3.5)),
                "texture": _random_texture(rng),
            }
            t = _wall_hit(ramp, dxg, dyg)
            visible = t < current
            if int(visible.sum()) < min_px:
                continue
            seen = t[visible]
            if seen.min() < cfg.depth_min + 0.3 or seen.max() > cfg.depth_max - 0.3:
                continue
            # require a real depth sweep across the visible part
            if seen.max() - seen.min() < 0.15 * d_span:
                continue
            surfaces.append(ramp)
            current = np.minimum(current, t)
            placed = True
            break
        if not placed and ramp_i == 0 and cfg.ramps[0] > 0:
            raise DataError(f"could not place a visible ramp after 100 attempts (seed {seed})")

    n_boxes = int(rng.integers(cfg.boxes[0], cfg.boxes[1] + 1))
    for _ in range(n_boxes):
        placed = False
        for _attempt in range(50):
            z0 = float(cfg.depth_min + rng.uniform(0.12, 0.6) * d_span)
            z0 = max(z0, cfg.depth_min + 1.5)
            depth_ext = float(rng.uniform(0.5, 2.0))
            half_w = float(rng.uniform(0.25, 1.3))
            xc = float(rng.uniform(-0.35, 0.35) * z0)
            height = float(rng.uniform(0.6, 2.4))
            y1 = floor["height"]
            box = {
                "type": "box",
                "x0": xc - half_w,
                "x1": xc + half_w,
                "y0": y1 - height,
                "y1": y1,
                "z0": z0,
                "z1": z0 + depth_ext,
                "texture": _random_texture(rng),
            }
            t = _box_hit(box, dxg, dyg)
            visible = int(np.sum(t < current))
            if visible >= 8:
                surfaces.append(box)
                current = np.minimum(current, t)
                placed = True
                break
        if not placed:
            raise DataError(f"could not place a visible box after 50 attempts (seed {seed})")
    return surfaces


def generate_scene(seed: int, cfg: SceneConfig):
    """Returns (rgb, dense depth, surface descriptor list), bit-deterministic per seed."""
    surfaces = build_scene(seed, cfg)
    rgb, depth = render_scene(surfaces, cfg)
    return rgb, depth, surfaces
