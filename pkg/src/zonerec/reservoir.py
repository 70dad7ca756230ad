"""Bottom water reservoirs: cavities that would hold water poured from below.

Think of the word turned upside down and rained on.  In image coordinates a
column's *ceiling* is its lowest ink pixel ``L(c)``.  Water poured upward
from the bottom edge settles against the ceilings and is held between two
taller walls, exactly like the classic trapped-rain-water problem::

    W(c) = min(max L(0..c), max L(c..end))

Column ``c`` holds water in rows ``L(c)+1 .. W(c)``.  Empty columns have
``L = -1`` so water reaching row 0 has escaped through a gap; such regions are
discarded.  Water pixels are grouped into reservoirs by 8-connectivity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import raster


@dataclass
class Reservoir:
    pixels: np.ndarray  # (n, 2) rows, cols
    height: int
    depth_points: list[tuple[int, int]]

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        r, c = self.pixels[:, 0], self.pixels[:, 1]
        return int(r.min()), int(c.min()), int(r.max()), int(c.max())


@dataclass(frozen=True)
class FitLine:
    slope: float
    intercept: float
    clamped: bool = False

    @property
    def angle(self) -> float:
        return math.degrees(math.atan(self.slope))


def water_mask(mask: np.ndarray) -> np.ndarray:
    """Background pixels that trap water poured from the bottom edge."""
    mask = np.asarray(mask, dtype=bool)
    H, W = mask.shape
    has = mask.any(axis=0)
    low = np.where(has, H - 1 - np.argmax(mask[::-1], axis=0), -1)
    level = np.minimum(np.maximum.accumulate(low), np.maximum.accumulate(low[::-1])[::-1])
    rows = np.arange(H)[:, None]
    return (rows > low[None, :]) & (rows <= level[None, :])


def _ceiling_profile(pixels: np.ndarray) -> tuple[int, np.ndarray]:
    cols = pixels[:, 1]
    c0 = int(cols.min())
    top = np.full(int(cols.max()) - c0 + 1, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(top, cols - c0, pixels[:, 0])
    return c0, top


def _ceiling_minima(pixels: np.ndarray, min_prominence: float = 0.0) -> list[tuple[int, int]]:
    """Local minima (smallest row) of the per-column top of a water region.

    Plateaus report their midpoint column.  A minimum's prominence is how
    far the ceiling must descend, on the shallower of its two sides, before
    a deeper minimum is reached; the region's edges count as descending to
    the water surface (one row below the lowest water pixel).
    """
    c0, top = _ceiling_profile(pixels)
    surface = int(pixels[:, 0].max()) + 1
    present = top != np.iinfo(np.int64).max
    pts: list[tuple[int, int]] = []
    idx = np.flatnonzero(present)
    splits = np.flatnonzero(np.diff(idx) > 1) + 1
    for seg in np.split(idx, splits):
        vals = top[seg]
        change = np.flatnonzero(np.diff(vals) != 0) + 1
        starts = np.concatenate([[0], change])
        ends = np.concatenate([change, [len(vals)]])
        runs = vals[starts]
        for k in range(len(runs)):
            v = runs[k]
            if not ((k == 0 or runs[k - 1] > v) and (k == len(runs) - 1 or runs[k + 1] > v)):
                continue
            if min_prominence > 0:
                sides = []
                for step in (-1, 1):
                    j, saddle = k + step, v
                    while 0 <= j < len(runs) and runs[j] >= v:
                        saddle = max(saddle, runs[j])
                        j += step
                    if not 0 <= j < len(runs):
                        saddle = max(saddle, surface)
                    sides.append(saddle - v)
                if min(sides) < min_prominence:
                    continue
            mid = (int(seg[starts[k]]) + int(seg[ends[k] - 1])) // 2
            pts.append((int(v), mid + c0))
    return pts


def depth_points(r: Reservoir | np.ndarray, min_prominence: float = 0.0) -> list[tuple[int, int]]:
    pixels = r.pixels if isinstance(r, Reservoir) else np.asarray(r)
    if pixels.size == 0:
        raise ValueError("empty reservoir")
    return _ceiling_minima(pixels, min_prominence)


def prominent_depth_points(rs: list[Reservoir], s_w: int, with_height: bool = False):
    """Depth points of lobes at least ``3 * s_w`` deep, over all reservoirs.

    With ``with_height`` each point comes paired with its reservoir height.
    """
    out = [(p, r.height) for r in rs for p in _ceiling_minima(r.pixels, 3 * s_w)]
    return out if with_height else [p for p, _ in out]


def bottom_reservoirs(mask: np.ndarray) -> list[Reservoir]:
    """All bottom reservoirs of a binary image, in raster order of first pixel."""
    water = water_mask(mask)
    out = []
    for comp in raster.connected_components(water, 8):
        if comp.bbox[0] == 0:
            continue  # escaped through an ink-free column
        height = comp.bbox[2] - comp.bbox[0] + 1
        out.append(Reservoir(comp.pixels, height, _ceiling_minima(comp.pixels)))
    return out


def filter_reservoirs(rs: list[Reservoir], s_w: int) -> list[Reservoir]:
    """Keep reservoirs at least ``3 * s_w`` tall (boundary value kept)."""
    return [r for r in rs if r.height >= 3 * s_w]


def fit_depth_line(points) -> FitLine:
    """Least-squares line ``row = slope * col + intercept``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2 or np.unique(pts[:, 1]).size < 2:
        raise ValueError("need at least two distinct columns to fit a line")
    r, c = pts[:, 0], pts[:, 1]
    cm, rm = c.mean(), r.mean()
    slope = float(((c - cm) * (r - rm)).sum() / ((c - cm) ** 2).sum())
    clamped = abs(slope) > 1.0
    if clamped:
        slope = math.copysign(1.0, slope)
    return FitLine(slope, float(rm - slope * cm), clamped)


def reservoir_mask(rs: list[Reservoir], shape) -> np.ndarray:
    out = np.zeros(shape, dtype=bool)
    for r in rs:
        out[r.pixels[:, 0], r.pixels[:, 1]] = True
    return out
