"""Splitting a corrected word into upper, middle and lower zones.

The headline (Matra) row is chosen from three candidate rows, the headline
itself is traced along the skeleton inside a band around that row, ink above
the traced path is the upper zone, and lower modifiers are either detached
components in the lower half or pieces cut off the body at a skeleton
junction and confirmed by a classifier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from . import raster, reservoir
from .raster import KeypointKind, Skeleton

UPPER, MIDDLE, LOWER = 1, 2, 3
REJECT = "~"  # classifier label for "not a modifier"
ACCEPT_POSTERIOR = 0.6
ACCEPT_MARGIN = 0.3


@dataclass
class MatraCandidates:
    r1: int
    r2: int
    r3: int
    h: int
    t_h: int
    r2_fallback: bool = False


@dataclass
class MatraPath:
    rows: np.ndarray  # per column row of the headline top, -1 where absent
    band: tuple[int, int]  # top, bottom (exclusive)
    synthetic: bool = False

    def present(self) -> np.ndarray:
        return self.rows >= 0


@dataclass
class Modifier:
    component: raster.Component
    span: tuple[int, int]  # inclusive column range
    touching: bool = False
    label: str | None = None
    posterior: float | None = None


@dataclass
class ZoneSplit:
    upper: np.ndarray
    middle: np.ndarray
    lower: np.ndarray
    upper_mods: list[Modifier]
    lower_mods: list[Modifier]
    matra: MatraPath
    candidates: MatraCandidates | None = None
    row: int = 0
    branch: int = 1
    flags: list[str] = field(default_factory=list)

    def label_map(self) -> np.ndarray:
        out = np.zeros(self.middle.shape, dtype=np.uint8)
        out[self.upper] = UPPER
        out[self.middle] = MIDDLE
        out[self.lower] = LOWER
        return out


# ----------------------------------------------------------------------------
# headline row
# ----------------------------------------------------------------------------


def sharpest_decline(proj: np.ndarray, limit: int) -> int:
    """Row ``r`` in ``1..limit-1`` maximising ``proj[r] - proj[r-1]``.

    Moving upward from row ``r`` to ``r-1`` the projection falls by that
    amount; ties go to the topmost row.
    """
    proj = np.asarray(proj, dtype=np.int64)
    limit = min(max(limit, 2), proj.size)
    if proj.size < 2:
        return 0
    drop = proj[1:limit] - proj[:limit - 1]
    return int(np.argmax(drop)) + 1


def matra_candidates(mask: np.ndarray) -> MatraCandidates:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty word image")
    proj = mask.sum(axis=1)
    r1 = int(np.argmax(proj))  # first maximum is the topmost
    s_w = raster.stroke_width(mask)
    rs = reservoir.filter_reservoirs(reservoir.bottom_reservoirs(mask), s_w)
    rows = [p[0] for r in rs for p in r.depth_points]
    if rows:
        r2, fb = int(round(float(np.mean(rows)))), False
    else:
        r2, fb = r1, True
    r3 = sharpest_decline(proj, int(math.ceil(0.6 * mask.shape[0])))
    h = raster.word_height(mask)
    return MatraCandidates(r1, r2, r3, h, h // 10, fb)


def matra_branch(c: MatraCandidates) -> int:
    """Which case of the three-way headline rule applies (1, 2 or 3)."""
    t = c.t_h
    if abs(c.r1 - c.r2) <= t or abs(c.r1 - c.r3) <= t:
        return 1
    if abs(c.r2 - c.r3) <= t:
        return 2
    return 3


def select_matra_row(c: MatraCandidates) -> int:
    return (c.r1, c.r2, c.r3)[matra_branch(c) - 1]


# ----------------------------------------------------------------------------
# headline path
# ----------------------------------------------------------------------------


def _split_at(seg: np.ndarray, cut_idx: list[int]) -> list[np.ndarray]:
    cuts = sorted(set(i for i in cut_idx if 0 < i < len(seg) - 1))
    out, start = [], 0
    for i in cuts:
        out.append(seg[start:i + 1])
        start = i
    out.append(seg[start:])
    return out


def skeleton_pieces(skel: Skeleton) -> list[np.ndarray]:
    """Skeleton chains between consecutive keypoints.

    Segments already end at end points and junctions; they are further cut
    at high-curvature points.
    """
    hc = {(k.row, k.col) for k in skel.of_kind(KeypointKind.HIGH_CURVATURE)}
    out = []
    for seg in skel.segments:
        idx = [i for i, (r, c) in enumerate(seg) if (int(r), int(c)) in hc]
        out.extend(_split_at(seg, idx))
    return out


def _lift(mask: np.ndarray, r: int, c: int, limit: int, top: int) -> int:
    """Top of the contiguous ink run above (r, c), at most ``limit`` rows up."""
    rr = r
    while rr - 1 >= max(top, r - limit) and mask[rr - 1, c]:
        rr -= 1
    return rr


def extract_matra(mask: np.ndarray, skel: Skeleton, row: int, s_w: int) -> MatraPath:
    """Trace the headline through skeleton pieces lying inside the band.

    Pieces leaving the band belong to characters and are dropped.  Per
    column the uppermost kept skeleton pixel is used, gaps are bridged with
    straight lines, and each path pixel is then lifted to the top edge of the
    headline stroke so the stroke itself stays out of the upper zone.
    """
    mask = np.asarray(mask, dtype=bool)
    H, W = mask.shape
    if not 0 <= row < H:
        raise ValueError("row outside image")
    top, bot = max(row - 2 * s_w, 0), min(row + 2 * s_w, H)
    rows = np.full(W, -1, dtype=np.int64)
    for piece in skeleton_pieces(skel):
        r = piece[:, 0]
        if r.min() < top or r.max() >= bot:
            continue
        for pr, pc in piece:
            if rows[pc] < 0 or pr < rows[pc]:
                rows[pc] = pr
    if not (rows >= 0).any():
        rows[:] = min(max(row, top), bot - 1)
        return MatraPath(rows, (top, bot), synthetic=True)
    # bridge gaps between the nearest headline pixels
    cols = np.flatnonzero(rows >= 0)
    for a, b in zip(cols[:-1], cols[1:]):
        if b - a > 1:
            for pr, pc in raster.bresenham((int(rows[a]), int(a)), (int(rows[b]), int(b))):
                if rows[pc] < 0 or pr < rows[pc]:
                    rows[pc] = pr
    lifted = rows.copy()
    for c in np.flatnonzero(rows >= 0):
        if mask[rows[c], c]:
            lifted[c] = _lift(mask, int(rows[c]), int(c), s_w, top)
    return MatraPath(lifted, (top, bot))


def split_upper(mask: np.ndarray, matra: MatraPath) -> tuple[np.ndarray, list[Modifier]]:
    mask = np.asarray(mask, dtype=bool)
    H = mask.shape[0]
    limit = np.where(matra.rows >= 0, matra.rows, 0)
    upper = mask & (np.arange(H)[:, None] < limit[None, :])
    mods = [Modifier(c, c.col_span) for c in raster.connected_components(upper, 8)]
    return upper, mods


# ----------------------------------------------------------------------------
# lower zone
# ----------------------------------------------------------------------------


def _segment_graph(skel: Skeleton):
    """Adjacency between node pixels (ends and junctions) via segments."""
    adj: dict[tuple, list[tuple[int, tuple]]] = {}
    for k, seg in enumerate(skel.segments):
        a = (int(seg[0][0]), int(seg[0][1]))
        b = (int(seg[-1][0]), int(seg[-1][1]))
        adj.setdefault(a, []).append((k, b))
        adj.setdefault(b, []).append((k, a))
    return adj


def _cycle_edges(adj) -> set[int]:
    """Segment ids lying on some cycle (non-bridge edges, incl. self loops)."""
    order: dict[tuple, int] = {}
    low: dict[tuple, int] = {}
    bridges: set[int] = set()
    counter = [0]

    for root in sorted(adj):
        if root in order:
            continue
        order[root] = low[root] = counter[0]
        counter[0] += 1
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            v, via, it = stack[-1]
            advanced = False
            for k, w in it:
                if k == via:
                    continue
                if w not in order:
                    order[w] = low[w] = counter[0]
                    counter[0] += 1
                    stack.append((w, k, iter(adj[w])))
                    advanced = True
                    break
                low[v] = min(low[v], order[w])
            if advanced:
                continue
            stack.pop()
            if stack:
                u = stack[-1][0]
                low[u] = min(low[u], low[v])
                if low[v] > order[u]:
                    bridges.add(via)
    all_edges = {k for lst in adj.values() for k, _ in lst}
    return all_edges - bridges


def _trace_to_cut(start, adj, loop_edges, segments, lower_top: int):
    """Walk from an end point along the skeleton to the cutting junction.

    Returns ``(cut_node, edges_on_residue_side)`` or ``None`` when the walk
    dead-ends.  A junction on a loop lying entirely in the lower half is
    passed through and the walk resumes at the next junction of that loop.
    """
    if len(adj.get(start, [])) != 1:
        return None
    k, node = adj[start][0]
    used = {k}
    while True:
        deg = len(adj.get(node, []))
        if deg < 3:
            return None  # reached another end: isolated stroke, nothing to cut
        loop = [(k2, w) for k2, w in adj[node] if k2 in loop_edges and k2 not in used]
        in_lower = loop and all(segments[k2][:, 0].min() >= lower_top for k2, _ in loop)
        if not in_lower:
            return node, used
        # go round the loop: collect its edges and leave from the other junction
        ring = _loop_from(node, loop[0][0], adj, loop_edges, segments, lower_top)
        if ring is None:
            return node, used
        edges, far = ring
        used |= edges
        if far == node:
            return node, used
        node = far


def _loop_from(node, first_edge, adj, loop_edges, segments, lower_top):
    """Edges of the lower-half loop through ``node`` and its exit junction."""
    seen_nodes = {node}
    edges = set()
    frontier = [node]
    while frontier:
        v = frontier.pop()
        for k, w in adj[v]:
            if k not in loop_edges or segments[k][:, 0].min() < lower_top or k in edges:
                continue
            edges.add(k)
            if w not in seen_nodes:
                seen_nodes.add(w)
                frontier.append(w)
    # exit: a loop node with an edge leaving the loop, other than the entry
    exits = sorted(n for n in seen_nodes if n != node and any(k not in edges for k, _ in adj[n]))
    if not edges:
        return None
    return edges, (exits[0] if exits else node)


def _residue(comp_mask: np.ndarray, skel_mask: np.ndarray, side_pixels: np.ndarray) -> np.ndarray:
    """Ink pixels whose nearest skeleton pixel is on the residue side."""
    side = np.zeros_like(skel_mask)
    side[side_pixels[:, 0], side_pixels[:, 1]] = True
    sk = skel_mask & comp_mask
    if not sk.any():
        return np.zeros_like(comp_mask)
    _, (ir, ic) = ndimage.distance_transform_edt(~sk, return_indices=True)
    return comp_mask & side[ir, ic]


def _classify(classify, img: np.ndarray) -> dict[str, float]:
    f = getattr(classify, "predict_proba", classify)
    return dict(f(img))


def accept_modifier(post: dict[str, float]) -> tuple[bool, str | None, float]:
    """Acceptance rule: top posterior above 0.6, or top-two margin above 0.3."""
    if not post:
        return False, None, 0.0
    ranked = sorted(post.items(), key=lambda kv: (-kv[1], kv[0]))
    lab, p1 = ranked[0]
    p2 = ranked[1][1] if len(ranked) > 1 else 0.0
    ok = lab != REJECT and (p1 > ACCEPT_POSTERIOR or p1 - p2 > ACCEPT_MARGIN)
    return ok, lab, float(p1)


def touching_candidates(body: np.ndarray, skel: Skeleton, lower_top: int) -> list[np.ndarray]:
    """Pieces of ``body`` hanging from a junction, traced from lower end points.

    Only the lowermost end point per column is used.  Each piece is returned
    as a boolean mask; pieces reaching above ``lower_top`` are skipped.
    """
    adj = _segment_graph(skel)
    loops = _cycle_edges(adj)
    ends = [k for k in skel.of_kind(KeypointKind.END) if k.row >= lower_top and body[k.row, k.col]]
    lowest: dict[int, tuple[int, int]] = {}
    for k in ends:
        if k.col not in lowest or k.row > lowest[k.col][0]:
            lowest[k.col] = (k.row, k.col)
    out: list[np.ndarray] = []
    seen: set[bytes] = set()
    for col in sorted(lowest):
        res = _trace_to_cut(lowest[col], adj, loops, skel.segments, lower_top)
        if res is None:
            continue
        cut, edges = res
        pix = np.concatenate([skel.segments[k] for k in sorted(edges)])
        pix = pix[(pix[:, 0] != cut[0]) | (pix[:, 1] != cut[1])]
        if pix.size == 0:
            continue
        piece = _residue(body, skel.mask, pix)
        if not piece.any():
            continue
        rows = np.nonzero(piece)[0]
        if rows.min() < lower_top:
            continue
        key = np.packbits(piece).tobytes()
        if key in seen:
            continue
        seen.add(key)
        out.append(piece)
    return out


def split_lower(mask: np.ndarray, skel: Skeleton, matra: MatraPath, classify=None,
                row: int | None = None) -> tuple[np.ndarray, np.ndarray, list[Modifier]]:
    """Separate lower modifiers from the part of the word below the headline.

    ``mask`` is the word without its upper zone.  Components lying in the
    lower half and not connected to the body become modifiers directly.
    Pieces cut off the body at a junction are kept as modifiers only when
    ``classify`` (an object with ``predict_proba`` or a callable returning
    label posteriors) accepts them.
    """
    mask = np.asarray(mask, dtype=bool)
    H, W = mask.shape
    middle = mask.copy()
    lower = np.zeros_like(mask)
    mods: list[Modifier] = []
    if not mask.any():
        return middle, lower, mods
    if row is None:
        present = matra.rows[matra.rows >= 0]
        row = int(np.median(present)) if present.size else 0
    bottom = int(np.nonzero(mask.any(axis=1))[0].max())
    lower_top = (row + bottom + 1) // 2

    lab, n = raster.label(mask, 8)
    path_lab = set()
    for c in np.flatnonzero(matra.rows >= 0):
        r = matra.rows[c]
        if lab[r, c]:
            path_lab.add(int(lab[r, c]))
    if not path_lab:
        # no component under the path: take the largest as the body
        sizes = np.bincount(lab.ravel())[1:]
        path_lab = {int(np.argmax(sizes)) + 1}
    comps = raster.connected_components(mask, 8)
    for comp in comps:
        rr = comp.pixels[:, 0]
        k = int(lab[rr[0], comp.pixels[0, 1]])
        if k in path_lab or rr.min() < lower_top:
            continue
        lower[rr, comp.pixels[:, 1]] = True
        middle[rr, comp.pixels[:, 1]] = False
        mods.append(Modifier(comp, comp.col_span))

    if classify is not None:
        body = np.isin(lab, sorted(path_lab)) & middle
        for piece in touching_candidates(body, skel, lower_top):
            if (piece & lower).any():
                continue
            ys, xs = np.nonzero(piece)
            crop = piece[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
            ok, name, p = accept_modifier(_classify(classify, crop))
            if not ok:
                continue
            lower |= piece
            middle &= ~piece
            pix = np.column_stack([ys, xs])
            comp = raster.Component(-1, pix, (int(ys.min()), int(xs.min()), int(ys.max()), int(xs.max())))
            mods.append(Modifier(comp, comp.col_span, touching=True, label=name, posterior=p))
    mods.sort(key=lambda m: (m.span[0], m.span[1]))
    return middle, lower, mods


# ----------------------------------------------------------------------------
# composition
# ----------------------------------------------------------------------------


def split_zones(mask: np.ndarray, classify=None, skel: Skeleton | None = None) -> ZoneSplit:
    """Full zone split; failures are reported through ``flags``."""
    mask = np.asarray(mask, dtype=bool)
    H, W = mask.shape
    empty = np.zeros_like(mask)
    if not mask.any():
        path = MatraPath(np.full(W, -1, dtype=np.int64), (0, 0), synthetic=True)
        return ZoneSplit(empty, empty.copy(), empty.copy(), [], [], path, flags=["empty"])
    flags: list[str] = []
    s_w = raster.stroke_width(mask)
    cand = matra_candidates(mask)
    if cand.r2_fallback:
        flags.append("no-reservoirs")
    branch = matra_branch(cand)
    row = select_matra_row(cand)
    if skel is None:
        skel = raster.skeletonize(mask)
    matra = extract_matra(mask, skel, row, s_w)
    if matra.synthetic:
        flags.append("synthetic-matra")
    upper, umods = split_upper(mask, matra)
    rest = mask & ~upper
    middle, lower, lmods = split_lower(rest, skel, matra, classify, row)
    return ZoneSplit(upper, middle, lower, umods, lmods, matra, cand, row, branch, flags)


def zone_error(pred: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of ink pixels whose zone label differs from ground truth."""
    ink = truth > 0
    n = int(ink.sum())
    if n == 0:
        return 0.0
    return float((pred[ink] != truth[ink]).sum()) / n


def zone_type(err: float) -> int:
    """1: clean, 2: at most 10% of pixels wrong, 3: worse."""
    if err == 0:
        return 1
    return 2 if err <= 0.10 else 3
