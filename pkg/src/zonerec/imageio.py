"""Reading and writing 8-bit gray images, plus colour debug overlays."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

# overlay colour coding
COLORS = {
    "reservoir": (160, 160, 160),
    "depth": (0, 200, 0),
    "matra": (0, 0, 255),
    "boundary": (255, 0, 0),
    "upper": (255, 140, 0),
    "lower": (160, 0, 200),
}


def read_gray(path) -> np.ndarray:
    """Load PGM (P5) or PNG as a uint8 gray array."""
    with Image.open(path) as im:
        if im.mode not in ("L", "1", "I", "I;16", "P", "RGB", "RGBA", "LA"):
            raise ValueError(f"unsupported image mode {im.mode}")
        return np.asarray(im.convert("L"), dtype=np.uint8).copy()


def write_gray(path, img: np.ndarray) -> None:
    """Write a gray array (or a boolean ink mask) as PGM or PNG by suffix."""
    img = np.asarray(img)
    if img.dtype == bool:
        img = np.where(img, 0, 255).astype(np.uint8)
    elif img.dtype != np.uint8:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() in (".pgm", ".pnm") else "PNG"
    Image.fromarray(img, mode="L").save(path, format=fmt)


def overlay(mask: np.ndarray, layers: dict[str, np.ndarray] | None = None,
            boundaries: list[int] | None = None, points=None) -> np.ndarray:
    """RGB image of ``mask`` in black on white with coloured layers on top.

    ``layers`` maps a key of :data:`COLORS` to a boolean mask; ``boundaries``
    are columns drawn as full-height red lines; ``points`` are (row, col)
    depth points drawn green.
    """
    mask = np.asarray(mask, dtype=bool)
    rgb = np.full(mask.shape + (3,), 255, dtype=np.uint8)
    rgb[mask] = 0
    for key, m in (layers or {}).items():
        rgb[np.asarray(m, dtype=bool)] = COLORS[key]
    for c in boundaries or []:
        if 0 <= c < mask.shape[1]:
            rgb[:, int(c)] = COLORS["boundary"]
    for r, c in points or []:
        r0, r1 = max(int(r) - 1, 0), min(int(r) + 2, mask.shape[0])
        c0, c1 = max(int(c) - 1, 0), min(int(c) + 2, mask.shape[1])
        rgb[r0:r1, c0:c1] = COLORS["depth"]
    return rgb


def write_rgb(path, rgb: np.ndarray) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")
