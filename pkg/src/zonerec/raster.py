"""Pixel-level primitives shared by every later stage.

Images are plain numpy arrays: gray images are ``uint8`` (0 = black ink,
255 = white paper), binary images are ``bool`` with ``True`` marking ink.
Coordinates are ``(row, col)`` throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import ndimage

from . import kernels


class DegenerateImageError(ValueError):
    """Raised when an operation needs ink and the image has none."""


def _check_2d(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {img.shape}")
    return img


# ----------------------------------------------------------------------------
# binarization
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Binarization:
    mask: np.ndarray
    threshold: int
    degenerate: bool


def otsu_threshold(hist: np.ndarray) -> tuple[int, bool]:
    """Threshold ``t`` in 1..255 maximising between-class variance.

    Class 0 holds values ``< t``.  Ties go to the smallest ``t``.  Returns
    ``(t, degenerate)`` where ``degenerate`` means every split has zero
    between-class variance.
    """
    hist = np.asarray(hist, dtype=np.float64)
    total = hist.sum()
    levels = np.arange(hist.size, dtype=np.float64)
    w0 = np.cumsum(hist)[:-1]  # weight of values < t for t = 1..255
    m0 = np.cumsum(hist * levels)[:-1]
    w1 = total - w0
    mu_t = (hist * levels).sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mu_t * w0 / total - m0) ** 2 * total / (w0 * w1)
    between = np.where((w0 > 0) & (w1 > 0), between, 0.0)
    best = float(between.max())
    if best <= 0.0:
        return 128, True
    t = int(np.flatnonzero(between >= best * (1 - 1e-12))[0]) + 1
    return t, False


def otsu_binarize(img: np.ndarray) -> Binarization:
    """Global Otsu binarization; dark pixels strictly below threshold are ink."""
    img = _check_2d(img)
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8) if img.dtype != np.uint8 else img
    hist = np.bincount(img.ravel(), minlength=256)
    t, degenerate = otsu_threshold(hist)
    if degenerate:
        return Binarization(np.zeros(img.shape, dtype=bool), t, True)
    return Binarization(img < t, t, False)


# ----------------------------------------------------------------------------
# connected components and smearing
# ----------------------------------------------------------------------------


@dataclass
class Component:
    id: int
    pixels: np.ndarray  # (n, 2) rows, cols in raster order
    bbox: tuple[int, int, int, int]  # row0, col0, row1, col1 inclusive

    @property
    def size(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def col_span(self) -> tuple[int, int]:
        return self.bbox[1], self.bbox[3]

    @property
    def center_col(self) -> float:
        return float(self.pixels[:, 1].mean())

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        out[self.pixels[:, 0], self.pixels[:, 1]] = True
        return out


_STRUCT = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def label(mask: np.ndarray, connectivity: int = 8) -> tuple[np.ndarray, int]:
    if connectivity not in _STRUCT:
        raise ValueError("connectivity must be 4 or 8")
    lab, n = ndimage.label(np.asarray(mask, dtype=bool), structure=_STRUCT[connectivity])
    return lab, int(n)


def connected_components(mask: np.ndarray, connectivity: int = 8) -> list[Component]:
    """Components labelled in raster-scan order of their first pixel."""
    lab, n = label(mask, connectivity)
    if n == 0:
        return []
    rows, cols = np.nonzero(lab)
    ids = lab[rows, cols]
    order = np.argsort(ids, kind="stable")
    rows, cols, ids = rows[order], cols[order], ids[order]
    bounds = np.searchsorted(ids, np.arange(1, n + 2))
    out = []
    for k in range(n):
        r = rows[bounds[k]:bounds[k + 1]]
        c = cols[bounds[k]:bounds[k + 1]]
        pix = np.column_stack([r, c])
        out.append(Component(k + 1, pix, (int(r.min()), int(c.min()), int(r.max()), int(c.max()))))
    return out


def rlsa_horizontal(mask: np.ndarray, gap: int) -> np.ndarray:
    """Fill background runs of length <= gap bounded by ink on both sides."""
    if gap < 0:
        raise ValueError("gap must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    out = mask.copy()
    if gap == 0:
        return out
    H, W = mask.shape
    cols = np.arange(W)
    # distance to previous ink (to the left) and next ink (to the right)
    last = np.where(mask, cols, -1)
    last = np.maximum.accumulate(last, axis=1)
    nxt = np.where(mask, cols, W)
    nxt = np.minimum.accumulate(nxt[:, ::-1], axis=1)[:, ::-1]
    run = nxt - last - 1
    fill = (~mask) & (last >= 0) & (nxt < W) & (run <= gap)
    out |= fill
    return out


# ----------------------------------------------------------------------------
# skeleton
# ----------------------------------------------------------------------------


class KeypointKind(str, Enum):
    END = "End"
    JUNCTION = "Junction"
    HIGH_CURVATURE = "HighCurvature"


@dataclass(frozen=True)
class Keypoint:
    row: int
    col: int
    kind: KeypointKind


@dataclass
class Skeleton:
    mask: np.ndarray
    keypoints: list[Keypoint] = field(default_factory=list)
    segments: list[np.ndarray] = field(default_factory=list)

    def of_kind(self, kind: KeypointKind) -> list[Keypoint]:
        return [k for k in self.keypoints if k.kind == kind]


_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def neighbor_count(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask, dtype=np.int32)
    p = np.pad(m, 1)
    H, W = m.shape
    acc = np.zeros_like(m)
    for dr, dc in _OFFSETS:
        acc += p[1 + dr:1 + dr + H, 1 + dc:1 + dc + W]
    return np.where(mask, acc, 0)


def _neighbors(skel: np.ndarray, r: int, c: int) -> list[tuple[int, int]]:
    H, W = skel.shape
    out = []
    for dr, dc in _OFFSETS:
        rr, cc = r + dr, c + dc
        if 0 <= rr < H and 0 <= cc < W and skel[rr, cc]:
            out.append((rr, cc))
    return out


def trace_segments(skel: np.ndarray) -> list[np.ndarray]:
    """Split a skeleton into pixel chains between node pixels.

    Node pixels are those without exactly two skeleton neighbours.  Every
    chain starts and ends at a node (both included) except pure cycles,
    which start at their first raster pixel and stop before repeating it.
    """
    skel = np.asarray(skel, dtype=bool)
    nb = neighbor_count(skel)
    node = skel & (nb != 2)
    seen_edges: set[tuple[int, int, int, int]] = set()
    visited = np.zeros_like(skel)
    segs: list[np.ndarray] = []

    for r, c in zip(*np.nonzero(node)):
        r, c = int(r), int(c)
        visited[r, c] = True
        nbrs = _neighbors(skel, r, c)
        if not nbrs:
            segs.append(np.array([[r, c]]))
            continue
        for m in nbrs:
            if (r, c, m[0], m[1]) in seen_edges:
                continue
            path = [(r, c), m]
            seen_edges.add((r, c, m[0], m[1]))
            seen_edges.add((m[0], m[1], r, c))
            prev, cur = (r, c), m
            while not node[cur]:
                visited[cur] = True
                cand = [p for p in _neighbors(skel, *cur) if p != prev]
                nxt = cand[0]
                if len(cand) > 1:
                    # prefer an unvisited edge; keeps the walk deterministic
                    fresh = [p for p in cand if (cur[0], cur[1], p[0], p[1]) not in seen_edges]
                    nxt = fresh[0] if fresh else cand[0]
                seen_edges.add((cur[0], cur[1], nxt[0], nxt[1]))
                seen_edges.add((nxt[0], nxt[1], cur[0], cur[1]))
                prev, cur = cur, nxt
                path.append(cur)
                if cur == (r, c):
                    break
            visited[cur] = True
            segs.append(np.array(path))

    # closed loops made only of degree-2 pixels
    rest = skel & ~visited
    while rest.any():
        r, c = (int(v) for v in np.argwhere(rest)[0])
        path = [(r, c)]
        rest[r, c] = False
        prev, cur = None, (r, c)
        while True:
            cand = [p for p in _neighbors(skel, *cur) if p != prev and rest[p]]
            if not cand:
                break
            prev, cur = cur, cand[0]
            rest[cur] = False
            path.append(cur)
        segs.append(np.array(path))
    return segs


def _turn_angles(path: np.ndarray, k: int = 2) -> np.ndarray:
    """Tangent turn (degrees) at each interior pixel over a (2k+1)-pixel arc."""
    n = len(path)
    out = np.zeros(n)
    if n < 2 * k + 1:
        return out
    p = path.astype(np.float64)
    v1 = p[k:n - k] - p[:n - 2 * k]
    v2 = p[2 * k:] - p[k:n - k]
    dot = (v1 * v2).sum(1)
    norm = np.linalg.norm(v1, axis=1) * np.linalg.norm(v2, axis=1)
    cosang = np.clip(dot / np.maximum(norm, 1e-12), -1.0, 1.0)
    out[k:n - k] = np.degrees(np.arccos(cosang))
    return out


def high_curvature_points(path: np.ndarray, nb: np.ndarray, min_turn: float = 45.0) -> list[int]:
    """Indices along ``path`` where the tangent turns by at least ``min_turn``.

    Runs of consecutive candidates keep only their sharpest member.
    """
    ang = _turn_angles(path)
    cand = [i for i in range(len(path))
            if ang[i] >= min_turn - 1e-9 and nb[path[i][0], path[i][1]] == 2]
    picks: list[int] = []
    run: list[int] = []
    for i in cand + [None]:
        if i is not None and run and i == run[-1] + 1:
            run.append(i)
            continue
        if run:
            picks.append(max(run, key=lambda j: (ang[j], -j)))
        run = [i] if i is not None else []
    return picks


def skeletonize(mask: np.ndarray, min_turn: float = 45.0) -> Skeleton:
    """Thin to a one-pixel skeleton and classify its keypoints."""
    mask = np.asarray(mask, dtype=bool)
    skel = kernels.thin(mask)
    nb = neighbor_count(skel)
    kps: list[Keypoint] = []
    for r, c in zip(*np.nonzero(skel & (nb == 1))):
        kps.append(Keypoint(int(r), int(c), KeypointKind.END))
    junc = skel & (nb >= 3)
    if junc.any():
        lab, n = label(junc, 8)
        for k in range(1, n + 1):
            rr, cc = np.nonzero(lab == k)
            best = int(np.argmax(nb[rr, cc]))  # first max in raster order
            kps.append(Keypoint(int(rr[best]), int(cc[best]), KeypointKind.JUNCTION))
    segs = trace_segments(skel)
    for seg in segs:
        for i in high_curvature_points(seg, nb, min_turn):
            kps.append(Keypoint(int(seg[i][0]), int(seg[i][1]), KeypointKind.HIGH_CURVATURE))
    kps.sort(key=lambda k: (k.row, k.col, k.kind.value))
    return Skeleton(skel, kps, segs)


# ----------------------------------------------------------------------------
# run-length statistics
# ----------------------------------------------------------------------------


def _runs_1d(mask: np.ndarray) -> np.ndarray:
    """Lengths of all foreground runs along axis 1 of a 2-D mask."""
    m = np.pad(np.asarray(mask, dtype=np.int8), ((0, 0), (1, 1)))
    d = np.diff(m, axis=1)
    starts = np.argwhere(d == 1)
    ends = np.argwhere(d == -1)
    # argwhere is row-major so starts and ends pair up
    return ends[:, 1] - starts[:, 1]


def run_lengths(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    return np.concatenate([_runs_1d(mask), _runs_1d(mask.T)])


def stroke_width(mask: np.ndarray) -> int:
    """Mode of horizontal and vertical ink run lengths (ties: smallest)."""
    runs = run_lengths(mask)
    if runs.size == 0:
        raise DegenerateImageError("stroke width of an empty image")
    return int(np.argmax(np.bincount(runs)))


def column_extents(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-most and bottom-most ink row per column, and which columns have ink."""
    mask = np.asarray(mask, dtype=bool)
    has = mask.any(axis=0)
    top = np.argmax(mask, axis=0)
    bot = mask.shape[0] - 1 - np.argmax(mask[::-1], axis=0)
    return top, bot, has


def word_height(mask: np.ndarray) -> int:
    """Mode of per-column ink extents (ties: largest)."""
    top, bot, has = column_extents(mask)
    if not has.any():
        raise DegenerateImageError("word height of an empty image")
    h = (bot - top + 1)[has]
    counts = np.bincount(h)
    return int(np.flatnonzero(counts == counts.max())[-1])


# ----------------------------------------------------------------------------
# geometric transforms
# ----------------------------------------------------------------------------


def _fill_value(img: np.ndarray, fill):
    if fill is not None:
        return fill
    if img.dtype == bool:
        return False
    border = np.concatenate([img[0], img[-1], img[:, 0], img[:, -1]])
    return np.median(border).astype(img.dtype)


def _sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray, nearest: bool, fill) -> np.ndarray:
    H, W = img.shape
    if nearest:
        yi = np.floor(ys + 0.5).astype(np.int64)
        xi = np.floor(xs + 0.5).astype(np.int64)
        ok = (yi >= 0) & (yi < H) & (xi >= 0) & (xi < W)
        out = np.full(ys.shape, fill, dtype=img.dtype)
        out[ok] = img[yi[ok], xi[ok]]
        return out
    src = img.astype(np.float64)
    padded = np.pad(src, 1, constant_values=float(fill))
    y = np.clip(ys + 1, 0, H + 1)
    x = np.clip(xs + 1, 0, W + 1)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, H)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, W)
    fy = y - y0
    fx = x - x0
    v = (padded[y0, x0] * (1 - fy) * (1 - fx) + padded[y0, x0 + 1] * (1 - fy) * fx
         + padded[y0 + 1, x0] * fy * (1 - fx) + padded[y0 + 1, x0 + 1] * fy * fx)
    outside = (ys < -1) | (ys > H) | (xs < -1) | (xs > W)
    v[outside] = float(fill)
    if np.issubdtype(img.dtype, np.integer):
        info = np.iinfo(img.dtype)
        return np.clip(np.rint(v), info.min, info.max).astype(img.dtype)
    return v.astype(img.dtype)


def _use_nearest(img: np.ndarray, order) -> bool:
    if order is not None:
        return order == 0
    return img.dtype == bool


def rotate(img: np.ndarray, theta: float, fill=None, order: int | None = None) -> np.ndarray:
    """Rotate by ``theta`` degrees on an expanded canvas.

    Positive angles turn the content clockwise on screen: a horizontal line
    becomes one whose row grows with column at slope ``tan(theta)``.  Binary
    images are resampled nearest-neighbour, gray ones bilinearly; pass
    ``order=0`` to force nearest (e.g. for label maps).
    """
    img = _check_2d(img)
    if abs(theta) > 45:
        raise ValueError("rotation limited to |theta| <= 45 degrees")
    if theta == 0:
        return img.copy()
    fill = _fill_value(img, fill)
    H, W = img.shape
    t = math.radians(theta)
    ct, st = math.cos(t), math.sin(t)
    cx, cy = (W - 1) / 2.0, (H - 1) / 2.0
    corners = np.array([[-0.5, -0.5], [W - 0.5, -0.5], [-0.5, H - 0.5], [W - 0.5, H - 0.5]])
    dx, dy = corners[:, 0] - cx, corners[:, 1] - cy
    rx = dx * ct - dy * st
    ry = dx * st + dy * ct
    x_min, y_min = rx.min(), ry.min()
    W2 = int(math.ceil(rx.max() - x_min - 1e-9))
    H2 = int(math.ceil(ry.max() - y_min - 1e-9))
    yy, xx = np.mgrid[0:H2, 0:W2].astype(np.float64)
    ox = x_min + xx + 0.5
    oy = y_min + yy + 0.5
    sx = ox * ct + oy * st + cx
    sy = -ox * st + oy * ct + cy
    return _sample(img, sy, sx, _use_nearest(img, order), fill)


def shear(img: np.ndarray, phi: float, fill=None, order: int | None = None) -> np.ndarray:
    """Horizontal shear by ``phi`` degrees keeping the bottom row fixed.

    Positive angles lean the top to the right by ``(H-1) * tan(phi)`` columns.
    """
    img = _check_2d(img)
    if abs(phi) > 45:
        raise ValueError("shear limited to |phi| <= 45 degrees")
    if phi == 0:
        return img.copy()
    fill = _fill_value(img, fill)
    H, W = img.shape
    k = math.tan(math.radians(phi))
    shifts = (H - 1 - np.arange(H)) * k
    lo = min(0.0, float(shifts.min()))
    hi = max(0.0, float(shifts.max()))
    W2 = W + int(math.ceil(hi - lo - 1e-9))
    yy, xx = np.mgrid[0:H, 0:W2].astype(np.float64)
    sx = xx + lo - shifts[:, None]
    if _use_nearest(img, order):
        return _sample(img, yy, sx, True, fill)
    return _sample(img, yy, sx, False, fill)


def bresenham(p: tuple[int, int], q: tuple[int, int]) -> list[tuple[int, int]]:
    """8-connected digital segment from ``p`` to ``q`` inclusive."""
    r0, c0 = int(p[0]), int(p[1])
    r1, c1 = int(q[0]), int(q[1])
    dr, dc = abs(r1 - r0), abs(c1 - c0)
    sr = 1 if r1 >= r0 else -1
    sc = 1 if c1 >= c0 else -1
    err = dc - dr
    out = [(r0, c0)]
    r, c = r0, c0
    while (r, c) != (r1, c1):
        e2 = 2 * err
        if e2 > -dr:
            err -= dr
            c += sc
        if e2 < dc:
            err += dc
            r += sr
        out.append((r, c))
    return out


# ----------------------------------------------------------------------------
# filtering, noise, morphology
# ----------------------------------------------------------------------------


def gaussian_kernel(sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with clamped edges; returns float64."""
    img = _check_2d(img).astype(np.float64)
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(img, k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def add_noise(img: np.ndarray, level: float, seed=None) -> np.ndarray:
    """Additive Gaussian noise with sigma = level * 255, clamped to [0, 255]."""
    if not 0.0 <= level <= 1.0:
        raise ValueError("noise level must lie in [0, 1]")
    img = _check_2d(img)
    if level == 0:
        return img.astype(np.uint8, copy=True)
    rng = np.random.default_rng(seed)
    noisy = img.astype(np.float64) + rng.normal(0.0, level * 255.0, size=img.shape)
    return np.clip(np.rint(noisy), 0, 255).astype(np.uint8)


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    return x * x + y * y <= r * r


def dilate(mask: np.ndarray, se: np.ndarray) -> np.ndarray:
    return ndimage.binary_dilation(mask, structure=se)


def erode(mask: np.ndarray, se: np.ndarray) -> np.ndarray:
    return ndimage.binary_erosion(mask, structure=se, border_value=0)


def morph_close(mask: np.ndarray, radius: int) -> np.ndarray:
    """Closing with a disk; the canvas is padded so nothing is lost at edges."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    se = disk(radius)
    pad = 2 * int(radius)
    p = np.pad(mask, pad)
    closed = erode(dilate(p, se), se)
    return closed[pad:-pad, pad:-pad]


def smooth_binary(mask: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """Gaussian-smooth a mask and re-threshold at one half (speck removal)."""
    return gaussian_smooth(np.asarray(mask, dtype=np.float64), sigma) > 0.5


def crop_to_ink(mask: np.ndarray, margin: int = 0) -> tuple[np.ndarray, tuple[int, int]]:
    """Crop to the ink bounding box plus ``margin``; returns (crop, (row0, col0))."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy(), (0, 0)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    r0 = max(int(rows[0]) - margin, 0)
    c0 = max(int(cols[0]) - margin, 0)
    r1 = min(int(rows[-1]) + margin + 1, mask.shape[0])
    c1 = min(int(cols[-1]) + margin + 1, mask.shape[1])
    return mask[r0:r1, c0:c1].copy(), (r0, c0)
