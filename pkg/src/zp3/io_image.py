"""8-bit PNG image I/O (deterministic bytes for fixed inputs)."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def save_png(path: str | Path, img: np.ndarray):
    """Float [0,1] HxWx3 (or HxW mask) -> 8-bit PNG."""
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    Image.fromarray(data, mode=mode).save(str(path), format="PNG")


def load_png(path: str | Path) -> np.ndarray:
    """PNG -> float64 [0,1]; RGB images come back HxWx3, grayscale HxW."""
    with Image.open(str(path)) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr
