"""Synthetic shapes dataset with exact geometric ground truth.

Each sample is a colored shape on mid-gray (the target), its binary
silhouette (the image condition), and a two-token prompt naming color and
shape. Targets and silhouettes share one rasterizer, so layout metrics have
an exact reference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import Rng

SHAPES = ("circle", "square", "triangle")

# 8-bit RGB palette; order also defines the tie-break for nearest-color
PALETTE = {
    "red": (200, 40, 40),
    "green": (40, 200, 40),
    "blue": (40, 40, 200),
    "yellow": (220, 220, 40),
}
COLOR_NAMES = tuple(PALETTE)
BACKGROUND = (128, 128, 128)

MIN_SIZE = 3
MARGIN = 1


def to_unit(values) -> np.ndarray:
    """Map 8-bit channel values linearly onto [-1, 1]."""
    return np.asarray(values, dtype=np.float64) * (2.0 / 255.0) - 1.0


@dataclass(frozen=True)
class SceneSpec:
    """One shape instance: kind, palette color, center (row, col), size.

    size is the radius for circles and the half-extent for squares and
    triangles.
    """

    shape: str
    color: str
    center: tuple[int, int]
    size: int

    def validate(self, canvas: int) -> None:
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape '{self.shape}'")
        if self.color not in PALETTE:
            raise ValueError(f"unknown color '{self.color}'")
        if self.size < MIN_SIZE:
            raise ValueError(f"size {self.size} below minimum {MIN_SIZE}")
        r, c = self.center
        lo = MARGIN + self.size
        hi = canvas - 1 - MARGIN - self.size
        if not (lo <= r <= hi and lo <= c <= hi):
            raise ValueError(
                f"shape of size {self.size} at {self.center} does not fit a "
                f"{canvas}x{canvas} canvas with a {MARGIN}-pixel margin"
            )


def shape_mask(scene: SceneSpec, canvas: int) -> np.ndarray:
    """Boolean (H, W) mask of the filled shape on integer pixel centers."""
    scene.validate(canvas)
    rows, cols = np.mgrid[0:canvas, 0:canvas]
    dr = rows - scene.center[0]
    dc = cols - scene.center[1]
    s = scene.size
    if scene.shape == "circle":
        return dr * dr + dc * dc <= s * s
    if scene.shape == "square":
        return (np.abs(dr) <= s) & (np.abs(dc) <= s)
    # up-pointing triangle: apex at (center_r - s), base halfwidth grows
    # linearly to s at the bottom row
    return (dr >= -s) & (dr <= s) & (2 * np.abs(dc) <= (dr + s))


def render_target(scene: SceneSpec, canvas: int) -> np.ndarray:
    """(3, H, W) float64 image in [-1, 1]: palette shape on mid-gray."""
    mask = shape_mask(scene, canvas)
    img = np.empty((3, canvas, canvas), dtype=np.float64)
    bg = to_unit(BACKGROUND)
    fg = to_unit(PALETTE[scene.color])
    for ch in range(3):
        img[ch] = np.where(mask, fg[ch], bg[ch])
    return img


def render_layout(scene: SceneSpec, canvas: int) -> np.ndarray:
    """(1, H, W) silhouette: +1 on the shape, -1 elsewhere."""
    mask = shape_mask(scene, canvas)
    return np.where(mask, 1.0, -1.0)[None].astype(np.float64)


def make_prompt(scene: SceneSpec) -> list[str]:
    return [scene.color, scene.shape]


def max_size(canvas: int) -> int:
    return (canvas - 1 - 2 * MARGIN) // 2


def sample_scene(rng: Rng, canvas: int) -> SceneSpec:
    """Uniform scene over valid (shape, color, size, center) tuples.

    Draw order is fixed: shape, color, size, row, col.
    """
    top = max_size(canvas)
    if top < MIN_SIZE:
        raise ValueError(f"canvas {canvas} too small for size-{MIN_SIZE} shapes")
    shape = SHAPES[int(rng.integers(1, len(SHAPES))[0])]
    color = COLOR_NAMES[int(rng.integers(1, len(COLOR_NAMES))[0])]
    size = MIN_SIZE + int(rng.integers(1, top - MIN_SIZE + 1)[0])
    span = canvas - 1 - 2 * (MARGIN + size)
    r = MARGIN + size + int(rng.integers(1, span + 1)[0])
    c = MARGIN + size + int(rng.integers(1, span + 1)[0])
    return SceneSpec(shape=shape, color=color, center=(r, c), size=size)


@dataclass(frozen=True)
class Sample:
    scene: SceneSpec
    target: np.ndarray      # (3, H, W) in [-1, 1]
    layout: np.ndarray      # (1, H, W) in {-1, +1}
    prompt: list[str]


def generate_dataset(n: int, canvas: int, seed: int, namespace: str = "scene") -> list[Sample]:
    """n deterministic samples; index i uses the stream split(f"{namespace}/{i}").

    Per-index streams make generation order-independent and parallelizable.
    """
    base = Rng(seed)
    samples = []
    for i in range(n):
        scene = sample_scene(base.split(f"{namespace}/{i}"), canvas)
        samples.append(
            Sample(
                scene=scene,
                target=render_target(scene, canvas).astype(np.float32),
                layout=render_layout(scene, canvas).astype(np.float32),
                prompt=make_prompt(scene),
            )
        )
    return samples


def persist_dataset(samples: list[Sample], out_dir: str | Path) -> Path:
    """Write targets (PPM), layouts (PGM), and a JSONL manifest."""
    from .imageio import write_pgm, write_ppm

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.jsonl"
    with manifest.open("w", encoding="utf-8") as fh:
        for i, s in enumerate(samples):
            target_name = f"target_{i:05d}.ppm"
            layout_name = f"layout_{i:05d}.pgm"
            write_ppm(s.target, out / target_name)
            write_pgm(s.layout, out / layout_name)
            record = {
                "index": i,
                "shape": s.scene.shape,
                "color": s.scene.color,
                "center": list(s.scene.center),
                "size": s.scene.size,
                "target": target_name,
                "layout": layout_name,
            }
            fh.write(json.dumps(record) + "\n")
    return manifest
