"""Procedural toy tasks: colored shapes with seeded per-image jitter.

Each task owns a shape kind, a hue band and a background; the k images of a
task jitter the shape's position and scale. Rendering is a pure function of
the sampled parameters, so a fixed seed reproduces the PNG files byte for
byte on any machine.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .images import save_png

SHAPE_KINDS = ("circle", "square", "triangle", "diamond", "cross")


def _shape_sdf(kind: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Signed distance (negative inside) of the unit-size shape at the origin."""
    ax, ay = np.abs(x), np.abs(y)
    if kind == "circle":
        return np.sqrt(x * x + y * y) - 1.0
    if kind == "square":
        return np.maximum(ax, ay) - 1.0
    if kind == "diamond":
        return (ax + ay - 1.0) / np.sqrt(2.0)
    if kind == "triangle":
        # upward triangle: base at y=0.7, apex at (0, -1)
        base = y - 0.7
        left = -0.85 * x - 0.5 * y - 0.5
        right = 0.85 * x - 0.5 * y - 0.5
        return np.maximum(base, np.maximum(left, right))
    if kind == "cross":
        bar_h = np.maximum(ax - 1.0, ay - 0.35)
        bar_v = np.maximum(ax - 0.35, ay - 1.0)
        return np.minimum(bar_h, bar_v)
    raise ValueError(f"unknown shape kind {kind!r}")


def _hsv_rgb(h: float, s: float, v: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v), dtype=np.float64)


@dataclass(frozen=True)
class ToyTaskRecipe:
    kind: str
    hue: float
    bg_hue: float
    bg_value: float


def task_recipe(task_index: int) -> ToyTaskRecipe:
    kind = SHAPE_KINDS[task_index % len(SHAPE_KINDS)]
    hue = (0.11 + task_index * 0.6180339887) % 1.0  # golden-ratio spaced hues
    return ToyTaskRecipe(
        kind=kind, hue=hue, bg_hue=(hue + 0.5) % 1.0, bg_value=0.18 + 0.06 * (task_index % 3)
    )


def render_toy_image(
    recipe: ToyTaskRecipe, cx: float, cy: float, scale: float, resolution: int
) -> torch.Tensor:
    """Render one jittered instance as a (3, res, res) tensor in [-1, 1]."""
    coords = (np.arange(resolution, dtype=np.float64) + 0.5) / resolution * 2.0 - 1.0
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    sd = _shape_sdf(recipe.kind, (xx - cx) / scale, (yy - cy) / scale) * scale
    edge = 2.0 / resolution
    mask = np.clip(0.5 - sd / (2.0 * edge), 0.0, 1.0)
    fg = _hsv_rgb(recipe.hue, 0.85, 0.95) * 2.0 - 1.0
    bg = _hsv_rgb(recipe.bg_hue, 0.35, recipe.bg_value) * 2.0 - 1.0
    img = mask[None, :, :] * fg[:, None, None] + (1.0 - mask)[None, :, :] * bg[:, None, None]
    return torch.from_numpy(img.astype(np.float32))


def make_toy_tasks(
    out_dir: Path | str,
    n_tasks: int,
    k: int = 10,
    seed: int = 0,
    resolution: int = 32,
) -> list[Path]:
    """Write n_tasks directories of k PNGs each; returns the task directories."""
    if n_tasks < 1 or k < 1:
        raise ValueError("need n_tasks >= 1 and k >= 1")
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    dirs = []
    for t in range(n_tasks):
        recipe = task_recipe(t)
        task_dir = out_dir / f"task{t:02d}"
        task_dir.mkdir(parents=True, exist_ok=True)
        for i in range(k):
            cx, cy = rng.uniform(-0.25, 0.25, size=2)
            scale = rng.uniform(0.35, 0.6)
            img = render_toy_image(recipe, float(cx), float(cy), float(scale), resolution)
            save_png(task_dir / f"img{i:02d}.png", img)
        dirs.append(task_dir)
    return dirs
