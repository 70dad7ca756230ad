"""Word-level skew and slant correction."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import raster, reservoir

SLANT_RANGE = 45
MAX_ANGLE = 45.0


@dataclass
class SkewEstimate:
    theta: float
    fallback: bool
    points: list = field(default_factory=list)


MIN_SUPPORT = 2
WEAK_MAX_ANGLE = 20.0  # a line resting on only two points must be at least this flat


def estimate_skew(mask: np.ndarray, min_support: int | None = None) -> SkewEstimate:
    """Skew angle from a line fitted through bottom-reservoir depth points.

    Falls back to 0 when fewer than two distinct depth-point columns exist.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return SkewEstimate(0.0, True)
    s_w = raster.stroke_width(mask)
    rs = reservoir.filter_reservoirs(reservoir.bottom_reservoirs(mask), s_w)
    found = reservoir.prominent_depth_points(rs, s_w, with_height=True)
    pts = [p for p, _ in found]
    try:
        line, kept = robust_depth_line(pts, s_w, [h for _, h in found])
    except ValueError:
        return SkewEstimate(0.0, True, pts)
    if len(kept) < (MIN_SUPPORT if min_support is None else min_support):
        return SkewEstimate(0.0, True, kept)
    if len(kept) == 2 and abs(line.angle) > WEAK_MAX_ANGLE:
        return SkewEstimate(0.0, True, kept)
    return SkewEstimate(line.angle, False, kept)


def robust_depth_line(points, max_residual: float, weights=None):
    """Consensus line through depth points.

    Depth points from cavities under inner strokes sit well below the
    headline and can have high leverage.  Every pair of points proposes a
    line; the one whose inliers (points within ``max_residual`` rows) carry
    the most weight wins (ties: smaller inlier squared error, then earlier
    pair), and the final line is the least-squares fit to its inliers.
    Weights default to 1; reservoir heights favour the tall gaps between
    characters over shallow cavities inside them.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    base = reservoir.fit_depth_line(pts)
    n = len(pts)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    best, best_key = None, None
    for i in range(n):
        for j in range(i + 1, n):
            dc = pts[j, 1] - pts[i, 1]
            if dc == 0:
                continue
            slope = (pts[j, 0] - pts[i, 0]) / dc
            if abs(slope) > 1.0:
                continue
            res = np.abs(pts[:, 0] - (pts[i, 0] + slope * (pts[:, 1] - pts[i, 1])))
            inl = res <= max_residual
            key = (-float(w[inl].sum()), float((res[inl] ** 2).sum()))
            if best_key is None or key < best_key:
                best, best_key = inl, key
    if best is None:
        return base, [tuple(map(int, p)) for p in pts]
    kept = pts[best]
    try:
        line = reservoir.fit_depth_line(kept)
    except ValueError:
        return base, [tuple(map(int, p)) for p in pts]
    return line, [tuple(map(int, p)) for p in kept]


def _clamp(angle: float, what: str) -> float:
    if abs(angle) > MAX_ANGLE:
        warnings.warn(f"{what} angle {angle:.2f} clamped to +-{MAX_ANGLE:g}", stacklevel=3)
        return math.copysign(MAX_ANGLE, angle)
    return angle


def correct_skew(img: np.ndarray, theta: float, **kw) -> np.ndarray:
    return raster.rotate(img, -_clamp(theta, "skew"), **kw)


def vertical_run_lengths(mask: np.ndarray) -> np.ndarray:
    """Length of the vertical ink run through each pixel (0 on background)."""
    m = np.asarray(mask, dtype=bool)
    a = np.cumsum(m, axis=0)
    down = a - np.maximum.accumulate(np.where(m, 0, a), axis=0)
    b = np.cumsum(m[::-1], axis=0)
    up = (b - np.maximum.accumulate(np.where(m[::-1], 0, b), axis=0))[::-1]
    return np.where(m, down + up - 1, 0)


def slant_scores(mask: np.ndarray, angles=None) -> tuple[np.ndarray, np.ndarray]:
    """Peakiness of the vertical projection after undoing each shear angle.

    The score is ``sum_c v(c)^2`` where ``v`` is the column projection of the
    deslanted ink.  Each pixel deposits a unit Gaussian (sigma 1 px) at its
    exact deslanted column so the score has no preference for whole-pixel
    shifts.
    """
    mask = np.asarray(mask, dtype=bool)
    if angles is None:
        angles = np.arange(-SLANT_RANGE, SLANT_RANGE + 1, dtype=np.float64)
    angles = np.asarray(angles, dtype=np.float64)
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return angles, np.zeros(angles.size)
    H = mask.shape[0]
    lift = (H - 1 - ys).astype(np.float64)
    origin = float(H) + 4  # keeps deslanted columns non-negative for |angle| <= 45
    offs = np.arange(-3, 5)
    scores = np.empty(angles.size)
    for k, a in enumerate(angles):
        x = xs - lift * math.tan(math.radians(a)) + origin
        base = np.floor(x).astype(np.int64)
        cols = base[:, None] + offs[None, :]
        w = np.exp(-0.5 * (cols - x[:, None]) ** 2)
        v = np.bincount(cols.ravel(), weights=w.ravel())
        scores[k] = float(v @ v)
    return angles, scores


def _best_angle(angles: np.ndarray, scores: np.ndarray) -> float:
    best = scores.max()
    cand = angles[scores >= best]
    return float(sorted(cand, key=lambda a: (abs(a), a))[0])


def _slant_once(mask: np.ndarray, min_run: int) -> float:
    if min_run > 0:
        vert = vertical_run_lengths(mask) >= min_run
        if vert.any():
            # grow back so the stroke ends trimmed by the run test are kept
            mask = raster.dilate(vert, raster.disk(max(min_run // 2, 1))) & mask
    return _best_angle(*slant_scores(mask))


def _below_headline(mask: np.ndarray, s_w: int) -> np.ndarray:
    """Ink of the headline-connected body below the headline.

    Shear never moves ink between rows, so the headline (densest row) can be
    found before deslanting.  Detached modifiers sit off the stem axes and
    would reward aligning them with stems, so they are left out.
    """
    r = int(np.argmax(mask.sum(axis=1)))
    lab, _ = raster.label(mask, 8)
    keep = np.unique(lab[r][lab[r] > 0])
    out = np.isin(lab, keep)
    out[:r + s_w + 1] = False
    return out if out.any() else mask


def estimate_slant(mask: np.ndarray, stroke_filter: bool = True, passes: int = 3,
                   below_headline: bool = True) -> float:
    """Shear angle whose removal makes the vertical projection peakiest.

    With ``stroke_filter`` the projection counts only pixels of near-vertical
    strokes (vertical runs of at least twice the stroke width).  Which
    strokes pass that filter depends on the current slant, so the estimate
    is refined by deslanting and re-estimating the residual, up to
    ``passes`` times.  Ties go to the smaller magnitude, then to the
    negative angle.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return 0.0
    if not stroke_filter:
        return _slant_once(mask, 0)
    s_w = raster.stroke_width(mask)
    min_run = 2 * s_w
    if below_headline:
        mask = _below_headline(mask, s_w)
    total = 0.0
    cur = mask
    for _ in range(max(passes, 1)):
        step = _slant_once(cur, min_run)
        if step == 0 or abs(total + step) > SLANT_RANGE:
            break
        total += step
        cur = raster.shear(mask, -total)
    return total


def correct_slant(img: np.ndarray, phi: float, **kw) -> np.ndarray:
    return raster.shear(img, -_clamp(phi, "slant"), **kw)


@dataclass
class Corrected:
    mask: np.ndarray
    theta: float
    phi: float
    skew_fallback: bool
    crop: tuple[int, int, int, int]  # row0, col0, height, width after correction

    def apply(self, arr: np.ndarray, fill=0) -> np.ndarray:
        """Replay the same corrections on a co-registered map (nearest)."""
        out = raster.rotate(arr, -self.theta, fill=fill, order=0) if self.theta else arr.copy()
        if self.phi:
            out = raster.shear(out, -self.phi, fill=fill, order=0)
        r0, c0, h, w = self.crop
        return out[r0:r0 + h, c0:c0 + w]


def correct(mask: np.ndarray, margin: int = 2) -> Corrected:
    """Estimate and remove skew, then slant; crop to ink plus ``margin``."""
    mask = np.asarray(mask, dtype=bool)
    sk = estimate_skew(mask)
    theta = max(-MAX_ANGLE, min(MAX_ANGLE, sk.theta))
    m = correct_skew(mask, theta) if theta else mask.copy()
    phi = estimate_slant(m)
    if phi:
        m = correct_slant(m, phi)
    crop, (r0, c0) = raster.crop_to_ink(m, margin)
    return Corrected(crop, theta, phi, sk.fallback, (r0, c0, crop.shape[0], crop.shape[1]))
