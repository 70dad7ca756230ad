"""Sliding-window features over the middle zone.

The middle zone is cropped to its ink, scaled to a fixed height and cut into
overlapping windows.  Gradient and Gabor responses are computed once on the
whole normalised strip and summed per window cell through integral images,
so a window's features depend only on the strip pixels around it.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from . import raster


class FeatureKind(str, Enum):
    PHOG = "phog"
    LGH = "lgh"
    GABOR = "gabor"
    GPHOG = "gphog"
    MB = "mb"


DIMS = {FeatureKind.PHOG: 168, FeatureKind.LGH: 128, FeatureKind.GABOR: 48,
        FeatureKind.GPHOG: 216, FeatureKind.MB: 9}
N_BINS = 8
PHOG_LEVELS = 2
GABOR_ORIENTATIONS = (0.0, 45.0, 90.0, 135.0)
GABOR_LAMBDA, GABOR_SIGMA, GABOR_GAMMA = 4.0, 2.0, 0.5
GABOR_BANDS = 12
SMOOTH_SIGMA = 1.0


@dataclass(frozen=True)
class FrameSpec:
    norm_height: int = 40
    win_width: int = 6
    step: int = 3

    def __post_init__(self):
        if self.step < 1 or self.win_width < self.step or self.norm_height < 1:
            raise ValueError("need step >= 1, win_width >= step and norm_height >= 1")


@dataclass
class FrameSequence:
    frames: np.ndarray  # (T, dim) float32
    kind: FeatureKind
    spec: FrameSpec = field(default_factory=FrameSpec)
    scale: float = 1.0
    x_offset: int = 0

    @property
    def dim(self) -> int:
        return int(self.frames.shape[1])

    def __len__(self) -> int:
        return int(self.frames.shape[0])


def frame_count(width: int, spec: FrameSpec) -> int:
    """Windows needed to cover ``width`` columns; the last one may be padded."""
    if width <= spec.win_width:
        return 1
    return -(-(width - spec.win_width) // spec.step) + 1


def frame_starts(width: int, spec: FrameSpec) -> np.ndarray:
    return np.arange(frame_count(width, spec)) * spec.step


# ----------------------------------------------------------------------------
# normalisation and windows
# ----------------------------------------------------------------------------


def normalize(middle: np.ndarray, norm_height: int = 40) -> tuple[np.ndarray, float, int]:
    """Crop to ink and scale to ``norm_height`` rows, keeping the aspect ratio.

    Returns the float strip (ink = 1), the scale factor and the column
    offset of the crop in the input.
    """
    m = np.asarray(middle)
    ink = m > 0 if m.dtype != bool else m
    if not ink.any():
        raise ValueError("empty middle zone")
    rows = np.flatnonzero(ink.any(axis=1))
    cols = np.flatnonzero(ink.any(axis=0))
    crop = ink[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1].astype(np.float32)
    h, w = crop.shape
    scale = norm_height / h
    new_w = max(1, int(round(w * scale)))
    img = Image.fromarray(crop, mode="F").resize((new_w, norm_height), Image.Resampling.BOX)
    return np.asarray(img, dtype=np.float64), float(scale), int(cols[0])


def pad_for_frames(strip: np.ndarray, spec: FrameSpec) -> np.ndarray:
    w = strip.shape[1]
    need = (frame_count(w, spec) - 1) * spec.step + spec.win_width
    if need > w:
        strip = np.pad(strip, ((0, 0), (0, need - w)))
    return strip


def normalize_and_frame(middle: np.ndarray, spec: FrameSpec = FrameSpec()) -> list[np.ndarray]:
    """Overlapping windows left to right; the last one zero-padded."""
    strip, _, _ = normalize(middle, spec.norm_height)
    return windows(strip, spec)


def windows(strip: np.ndarray, spec: FrameSpec) -> list[np.ndarray]:
    p = pad_for_frames(strip, spec)
    return [p[:, s:s + spec.win_width] for s in frame_starts(strip.shape[1], spec)]


# ----------------------------------------------------------------------------
# gradient histograms
# ----------------------------------------------------------------------------


def _gradient(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences (one-sided on the border); rows grow downward."""
    img = np.asarray(img, dtype=np.float64)
    gy = np.gradient(img, axis=0) if img.shape[0] > 1 else np.zeros_like(img)
    gx = np.gradient(img, axis=1) if img.shape[1] > 1 else np.zeros_like(img)
    return gx, gy


def orientation_bins(gx: np.ndarray, gy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Octant index (0..7, counter-clockwise from +x, y up) and magnitude."""
    ang = np.arctan2(-gy, gx) % (2 * np.pi)
    b = np.minimum((ang / (2 * np.pi / N_BINS)).astype(np.int64), N_BINS - 1)
    return b, np.hypot(gx, gy)


def _integral(planes: np.ndarray) -> np.ndarray:
    """Zero-padded 2-D cumulative sums over the last two axes."""
    out = np.zeros(planes.shape[:-2] + (planes.shape[-2] + 1, planes.shape[-1] + 1))
    out[..., 1:, 1:] = planes.cumsum(axis=-2).cumsum(axis=-1)
    return out


def _box(ii: np.ndarray, r0, r1, c0, c1) -> np.ndarray:
    return ii[..., r1, c1] - ii[..., r0, c1] - ii[..., r1, c0] + ii[..., r0, c0]


def _edges(n: int, k: int) -> np.ndarray:
    return np.rint(np.linspace(0, n, k + 1)).astype(np.int64)


def _binned_planes(img: np.ndarray) -> np.ndarray:
    gx, gy = _gradient(img)
    b, mag = orientation_bins(gx, gy)
    planes = np.zeros((N_BINS,) + img.shape)
    for k in range(N_BINS):
        planes[k] = np.where(b == k, mag, 0.0)
    return planes


def _cell_hist(ii: np.ndarray, starts: np.ndarray, H: int, width: int, grid: int) -> np.ndarray:
    """(T, grid*grid, bins) cell histograms for windows starting at ``starts``."""
    re, ce = _edges(H, grid), _edges(width, grid)
    out = np.zeros((len(starts), grid * grid, ii.shape[0]))
    for i in range(grid):
        for j in range(grid):
            v = _box(ii, re[i], re[i + 1], starts + ce[j], starts + ce[j + 1])  # (bins, T)
            out[:, i * grid + j, :] = np.maximum(v.T, 0.0)  # integral-image round-off
    return out


def _l1(block: np.ndarray) -> np.ndarray:
    s = block.sum(axis=-1, keepdims=True)
    return np.divide(block, s, out=np.zeros_like(block), where=s > 0)


def _phog_frames(planes_ii: np.ndarray, starts, H, width) -> np.ndarray:
    parts = []
    for lvl in range(PHOG_LEVELS + 1):
        g = 2 ** lvl
        h = _cell_hist(planes_ii, starts, H, width, g).reshape(len(starts), -1)
        parts.append(_l1(h))
    return np.concatenate(parts, axis=1)


def _lgh_frames(planes_ii: np.ndarray, starts, H, width) -> np.ndarray:
    h = _cell_hist(planes_ii, starts, H, width, 4).reshape(len(starts), -1)
    return _l1(h)


def phog(window: np.ndarray) -> np.ndarray:
    """168-value pyramid histogram of oriented gradients of one window.

    Levels 0..2 with 1, 4 and 16 cells; each level block sums to 1 (or is
    all zero when the window has no gradient).
    """
    w = raster.gaussian_smooth(np.asarray(window, dtype=np.float64), SMOOTH_SIGMA)
    ii = _integral(_binned_planes(w))
    return _phog_frames(ii, np.array([0]), w.shape[0], w.shape[1])[0]


def lgh(window: np.ndarray) -> np.ndarray:
    """128 values: 8-bin gradient histograms of a 4x4 cell grid, row-major."""
    w = raster.gaussian_smooth(np.asarray(window, dtype=np.float64), SMOOTH_SIGMA)
    ii = _integral(_binned_planes(w))
    return _lgh_frames(ii, np.array([0]), w.shape[0], w.shape[1])[0]


# ----------------------------------------------------------------------------
# Gabor
# ----------------------------------------------------------------------------


def gabor_kernel(theta_deg: float, lam: float = GABOR_LAMBDA, sigma: float = GABOR_SIGMA,
                 gamma: float = GABOR_GAMMA) -> np.ndarray:
    """Complex zero-mean Gabor kernel.

    Orientation 0 is tuned to horizontal stripes (the carrier runs down the
    rows), 90 to vertical stripes.
    """
    rad = int(math.ceil(3 * sigma / gamma))
    y, x = np.mgrid[-rad:rad + 1, -rad:rad + 1].astype(np.float64)
    t = math.radians(theta_deg)
    u = y * math.cos(t) + x * math.sin(t)  # across the stripes
    v = -y * math.sin(t) + x * math.cos(t)  # along the stripes
    env = np.exp(-(u ** 2 + (gamma * v) ** 2) / (2 * sigma ** 2))
    k = env * np.exp(1j * 2 * np.pi * u / lam)
    k.real -= env * (k.real.sum() / env.sum())  # remove the DC response
    return k


def gabor_responses(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    out = np.empty((len(GABOR_ORIENTATIONS),) + img.shape)
    for i, th in enumerate(GABOR_ORIENTATIONS):
        k = gabor_kernel(th)
        re = ndimage.correlate(img, k.real, mode="nearest")
        im = ndimage.correlate(img, k.imag, mode="nearest")
        out[i] = np.hypot(re, im)
    return out


def _band_rows(H: int) -> list[tuple[int, int]]:
    e = _edges(H, GABOR_BANDS)
    out = []
    for b in range(GABOR_BANDS):
        if e[b + 1] > e[b]:
            out.append((int(e[b]), int(e[b + 1])))
        else:
            r = min(int((b + 0.5) * H / GABOR_BANDS), H - 1)
            out.append((r, r + 1))
    return out


def _gabor_frames(resp_ii: np.ndarray, starts, H, width) -> np.ndarray:
    T = len(starts)
    out = np.zeros((T, len(GABOR_ORIENTATIONS), GABOR_BANDS))
    for b, (r0, r1) in enumerate(_band_rows(H)):
        v = _box(resp_ii, r0, r1, starts, starts + width)  # (orient, T)
        out[:, :, b] = (v / ((r1 - r0) * width)).T
    return out.reshape(T, -1)


def gabor(window: np.ndarray) -> np.ndarray:
    """48 values: mean Gabor magnitude in 12 row bands for 4 orientations."""
    w = np.asarray(window, dtype=np.float64)
    ii = _integral(gabor_responses(w))
    return _gabor_frames(ii, np.array([0]), w.shape[0], w.shape[1])[0]


def gphog(window: np.ndarray) -> np.ndarray:
    return np.concatenate([gabor(window), phog(window)])


# ----------------------------------------------------------------------------
# column profile features
# ----------------------------------------------------------------------------


def marti_bunke(img: np.ndarray) -> np.ndarray:
    """Nine profile features per column of a height-normalised image.

    Rows are measured at pixel centres and divided by the height.  Empty
    columns give ``(0, .5, 0, .5, .5, 0, 0, 0, 0)``.
    """
    ink = np.asarray(img)
    ink = ink > 0.5 if ink.dtype != bool else ink
    H, W = ink.shape
    r = (np.arange(H)[:, None] + 0.5) / H
    cnt = ink.sum(axis=0)
    has = cnt > 0
    safe = np.maximum(cnt, 1)
    f = np.zeros((W, 9))
    f[:, 0] = cnt / H
    f[:, 1] = np.where(has, (ink * r).sum(axis=0) / safe, 0.5)
    f[:, 2] = np.where(has, (ink * r ** 2).sum(axis=0) / safe, 0.0)
    top = np.argmax(ink, axis=0)
    bot = H - 1 - np.argmax(ink[::-1], axis=0)
    up = np.where(has, (top + 0.5) / H, 0.5)
    lo = np.where(has, (bot + 0.5) / H, 0.5)
    f[:, 3], f[:, 4] = up, lo
    padded = np.vstack([np.zeros((1, W), bool), ink])
    f[:, 5] = (padded[1:] & ~padded[:-1]).sum(axis=0)
    f[:, 6] = np.where(has, cnt / np.maximum(bot - top + 1, 1), 0.0)
    both = has[1:] & has[:-1]
    f[1:, 7] = np.where(both, up[1:] - up[:-1], 0.0)
    f[1:, 8] = np.where(both, lo[1:] - lo[:-1], 0.0)
    return f


# ----------------------------------------------------------------------------
# dispatch
# ----------------------------------------------------------------------------


def strip_frames(strip: np.ndarray, kind: FeatureKind | str, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    """Frames of an already normalised strip, as float32 ``(T, dim)``."""
    kind = FeatureKind(kind)
    strip = np.asarray(strip, dtype=np.float64)
    if kind is FeatureKind.MB:
        return marti_bunke(strip).astype(np.float32)
    W = strip.shape[1]
    starts = frame_starts(W, spec)
    p = pad_for_frames(strip, spec)
    H, win = p.shape[0], spec.win_width
    parts = []
    if kind in (FeatureKind.GABOR, FeatureKind.GPHOG):
        parts.append(_gabor_frames(_integral(gabor_responses(p)), starts, H, win))
    if kind is not FeatureKind.GABOR:
        ii = _integral(_binned_planes(raster.gaussian_smooth(p, SMOOTH_SIGMA)))
        if kind is FeatureKind.LGH:
            parts.append(_lgh_frames(ii, starts, H, win))
        else:
            parts.append(_phog_frames(ii, starts, H, win))
    return np.concatenate(parts, axis=1).astype(np.float32)


def extract(middle: np.ndarray, kind: FeatureKind | str = FeatureKind.PHOG,
            spec: FrameSpec = FrameSpec()) -> FrameSequence:
    try:
        kind = FeatureKind(kind)
    except ValueError:
        raise ValueError(f"unknown feature kind {kind!r}") from None
    strip, scale, x0 = normalize(middle, spec.norm_height)
    return FrameSequence(strip_frames(strip, kind, spec), kind, spec, scale, x0)


# ----------------------------------------------------------------------------
# container
# ----------------------------------------------------------------------------

MAGIC = b"ZFEA"
VERSION = 1
_KIND_CODES = {k: i for i, k in enumerate(FeatureKind)}
_HEADER = struct.Struct("<4sHBxIIHHHxxdi")


def dumps(seq: FrameSequence) -> bytes:
    fr = np.ascontiguousarray(seq.frames, dtype="<f4")
    head = _HEADER.pack(MAGIC, VERSION, _KIND_CODES[seq.kind], fr.shape[1], fr.shape[0],
                        seq.spec.norm_height, seq.spec.win_width, seq.spec.step,
                        float(seq.scale), int(seq.x_offset))
    return head + fr.tobytes()


def loads(data: bytes) -> FrameSequence:
    if len(data) < _HEADER.size:
        raise ValueError("truncated feature file")
    magic, ver, code, dim, count, nh, ww, st, scale, x0 = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError("not a feature file")
    if ver != VERSION:
        raise ValueError(f"unsupported feature file version {ver}")
    body = data[_HEADER.size:]
    if len(body) != 4 * dim * count:
        raise ValueError("feature file size does not match its header")
    frames = np.frombuffer(body, dtype="<f4").reshape(count, dim).astype(np.float32)
    kind = list(FeatureKind)[code]
    return FrameSequence(frames, kind, FrameSpec(nh, ww, st), scale, x0)


def save(path, seq: FrameSequence) -> None:
    Path(path).write_bytes(dumps(seq))


def load(path) -> FrameSequence:
    return loads(Path(path).read_bytes())
