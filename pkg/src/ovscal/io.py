"""PNG and JSON artifact helpers.

Label maps are single-channel 16-bit grayscale PNGs (pixel value = class
id, 65535 = ignore). Reports are written atomically (write to a temp file,
then rename).
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
from PIL import Image


def save_label_png(labels: np.ndarray, path: str | Path) -> None:
    arr = np.asarray(labels, dtype=np.uint16)
    Image.fromarray(arr).save(path)  # uint16 -> mode I;16


def load_label_png(path: str | Path) -> np.ndarray:
    return np.array(Image.open(path)).astype(np.uint16)


def save_image_png(image: np.ndarray, path: str | Path) -> None:
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def load_image_png(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def dump_json(obj, path: str | Path) -> None:
    """Deterministic, atomic JSON write."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
