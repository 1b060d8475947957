"""Deterministic synthetic scenes: colored shapes on a textured background.

Class 0 is always the background. Shape classes get stable per-class base
colors; shapes are rectangles or ellipses placed by rejection sampling so
they never overlap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .errors import ConfigError
from .seeding import keyed_rng

_TAG_COLORS = 31
_TAG_SCENE = 32

# 12-class demo taxonomy; relations map each class to its synonyms/parents.
DEMO_CLASS_NAMES = [
    "background",
    "chair",
    "armchair",
    "swivel chair",
    "table",
    "coffee table",
    "seat",
    "sofa",
    "couch",
    "lamp",
    "light",
    "plant",
]
DEMO_RELATIONS: Dict[str, List[int]] = {
    "2": [1],  # armchair -> chair
    "3": [1],  # swivel chair -> chair
    "5": [4],  # coffee table -> table
    "7": [6],  # sofa -> seat
    "8": [7],  # couch -> sofa
    "10": [9],  # light -> lamp
}


@dataclass
class SceneConfig:
    image_count: int = 4
    canvas: int = 112
    num_classes: int = 12
    shapes_min: int = 1
    shapes_max: int = 3
    hierarchy: Dict[str, List[int]] = field(
        default_factory=lambda: dict(DEMO_RELATIONS)
    )
    class_names: List[str] = field(default_factory=lambda: list(DEMO_CLASS_NAMES))
    seed: int = 0
    texture_amplitude: float = 0.04

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes (background + one shape class)")
        if self.shapes_min < 1 or self.shapes_max < self.shapes_min:
            raise ConfigError("invalid shapes-per-image range")
        if len(self.class_names) != self.num_classes:
            raise ConfigError(
                f"{len(self.class_names)} class names for {self.num_classes} classes"
            )


def _class_colors(cfg: SceneConfig) -> np.ndarray:
    rng = keyed_rng(cfg.seed, _TAG_COLORS)
    return rng.random((cfg.num_classes, 3)) * 0.7 + 0.15


def generate_scene(cfg: SceneConfig, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (image, label map) for one scene index."""
    rng = keyed_rng(cfg.seed, _TAG_SCENE, index)
    s = cfg.canvas
    colors = _class_colors(cfg)
    labels = np.zeros((s, s), dtype=np.uint16)
    image = np.tile(colors[0], (s, s, 1))

    yy, xx = np.mgrid[0:s, 0:s]
    n_shapes = int(rng.integers(cfg.shapes_min, cfg.shapes_max + 1))
    min_half = max(4, s // 14)
    max_half = max(min_half + 1, s // 4)
    for _ in range(n_shapes):
        cls = int(rng.integers(1, cfg.num_classes))
        for _attempt in range(30):
            kind = rng.integers(0, 2)
            hy = int(rng.integers(min_half, max_half))
            hx = int(rng.integers(min_half, max_half))
            cy = int(rng.integers(hy, s - hy))
            cx = int(rng.integers(hx, s - hx))
            if kind == 0:
                region = (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)
            else:
                region = ((yy - cy) / hy) ** 2 + ((xx - cx) / hx) ** 2 <= 1.0
            if not (labels[region] != 0).any():
                labels[region] = cls
                image[region] = colors[cls]
                break

    image = image + rng.normal(0.0, cfg.texture_amplitude, (s, s, 3))
    return np.clip(image, 0.0, 1.0), labels
