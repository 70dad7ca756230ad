"""Synthetic headline-script word generator with pixel-exact zone ground truth.

Glyphs are stencils of polylines, rings and disks in a unit box.  A word is
rendered as middle glyphs hanging from a common headline, with upper
modifiers above it and lower modifiers below the body, each separated by a
small gap.  Every ink pixel carries a zone label (1 upper, 2 middle,
3 lower) that follows the same geometric distortions as the ink.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import imageio, raster
from .combiner import LexEntry, Lexicon, ZoneTable

UPPER, MIDDLE, LOWER = 1, 2, 3
INK, PAPER = 30, 220

# stencil primitives: ("line", [(x, y), ...]), ("ring", cx, cy, r), ("disk", cx, cy, r)
MIDDLE_STENCILS = {
    "a": [("line", [(.85, 0), (.85, 1)]), ("ring", .4, .62, .28), ("line", [(.68, .62), (.85, .62)])],
    "b": [("line", [(.15, 0), (.15, 1)]), ("line", [(.15, .45), (.85, 1)])],
    "c": [("line", [(.15, 0), (.15, 1)]), ("line", [(.85, 0), (.85, 1)]), ("line", [(.15, .55), (.85, .55)])],
    "d": [("line", [(.85, 0), (.85, 1)]), ("line", [(.85, .3), (.15, .3), (.15, .85), (.6, .85)])],
    "e": [("line", [(.5, 0), (.5, 1)]), ("line", [(.1, .15), (.5, .6), (.9, .15)])],
    "f": [("line", [(.5, 0), (.5, 1)]), ("line", [(.1, 1), (.9, 1)])],
    "g": [("line", [(.85, 0), (.85, 1)]), ("line", [(.85, .25), (.15, .45), (.85, .65), (.15, .92)])],
    "h": [("line", [(.15, 0), (.15, 1), (.85, 1), (.85, .45)])],
    "i": [("line", [(.85, 0), (.85, 1)]), ("line", [(.85, .35), (.15, .35), (.15, .75), (.85, .75)])],
    "j": [("line", [(.15, 0), (.15, 1)]), ("line", [(.15, .15), (.85, .9)]), ("line", [(.85, .2), (.85, 1)])],
}
UPPER_STENCILS = {
    "U": [("disk", .5, .5, .42)],
    "V": [("line", [(0, .45), (.35, 1), (1, 0)])],
    "W": [("line", [(0, 0), (.1, .55), (.3, .9), (.5, 1), (.7, .9), (.9, .55), (1, 0)])],
}
LOWER_STENCILS = {
    "X": [("line", [(.25, 0), (.25, .65), (.45, 1), (.8, 1), (1, .7)])],
    "Y": [("ring", .5, .5, .45)],
}


@dataclass
class Alphabet:
    middle: dict = field(default_factory=lambda: dict(MIDDLE_STENCILS))
    upper: dict = field(default_factory=lambda: dict(UPPER_STENCILS))
    lower: dict = field(default_factory=lambda: dict(LOWER_STENCILS))
    stroke: int = 3
    body_height: tuple[int, int] = (24, 28)
    glyph_width: tuple[int, int] = (22, 28)
    glyph_gap: tuple[int, int] = (5, 8)
    mod_size: tuple[int, int] = (10, 9)  # width, height
    mod_gap: tuple[int, int] = (5, 7)
    jitter: float = 1.2
    headline: bool = True

    def validate(self) -> None:
        if len(self.middle) < 5 or len(self.upper) < 2 or len(self.lower) < 2:
            raise ValueError("alphabet needs >= 5 middle, >= 2 upper and >= 2 lower stencils")
        if not self.headline:
            raise ValueError("only headline scripts are supported")
        syms = list(self.middle) + list(self.upper) + list(self.lower)
        if len(set(syms)) != len(syms) or any(len(s) != 1 for s in syms):
            raise ValueError("stencil symbols must be distinct single characters")
        if self.stroke < 1 or self.glyph_gap[0] < 2 * self.stroke - 1:
            raise ValueError("glyph gap too small for the stroke width")

    def table(self) -> ZoneTable:
        return ZoneTable.from_symbols("".join(self.middle), "".join(self.upper), "".join(self.lower))


LENGTH_WEIGHTS = {2: .10, 3: .20, 4: .30, 5: .20, 6: .12, 7: .08}


def make_lexicon(alphabet: Alphabet, n_words: int, seed: int = 0,
                 length_weights: dict[int, float] | None = None,
                 p_upper: float = 0.3, p_lower: float = 0.2, p_variant: float = 0.2) -> Lexicon:
    """Random lexicon of distinct full words.

    A fraction ``p_variant`` of words reuse an earlier word's middle string
    with different modifiers, so that modifiers matter for recognition.
    """
    alphabet.validate()
    weights = length_weights or LENGTH_WEIGHTS
    lengths = np.array(sorted(weights))
    probs = np.array([weights[k] for k in lengths], dtype=np.float64)
    probs /= probs.sum()
    rng = np.random.default_rng(seed)
    mids, ups, lows = list(alphabet.middle), list(alphabet.upper), list(alphabet.lower)
    table = alphabet.table()
    words: dict[str, None] = {}
    middles: list[str] = []
    guard = 0
    while len(words) < n_words:
        guard += 1
        if guard > 1000 * n_words:
            raise ValueError("cannot draw enough distinct words")
        if middles and rng.random() < p_variant:
            middle = middles[int(rng.integers(len(middles)))]
        else:
            k = int(rng.choice(lengths, p=probs))
            middle = "".join(rng.choice(mids, size=k))
        up = {i: str(rng.choice(ups)) for i in range(len(middle)) if rng.random() < p_upper}
        lo = {i: str(rng.choice(lows)) for i in range(len(middle)) if rng.random() < p_lower}
        w = table.compose(middle, up, lo)
        if w in words:
            continue
        words[w] = None
        middles.append(middle)
    return Lexicon.from_words(list(words), table)


# ----------------------------------------------------------------------------
# rendering
# ----------------------------------------------------------------------------


def _stamp(canvas: np.ndarray, labels: np.ndarray, prims, x0, y0, w, h, lab, rng, jitter, stroke):
    """Draw stencil primitives scaled into the box (x0, y0, w, h)."""
    H, W = canvas.shape
    pts_mask = np.zeros_like(canvas)
    fill = np.zeros_like(canvas)
    for prim in prims:
        kind = prim[0]
        if kind == "disk":
            _, cx, cy, r = prim
            rr = r * min(w, h)
            yy, xx = np.mgrid[0:H, 0:W]
            fill |= (xx - (x0 + cx * w)) ** 2 + (yy - (y0 + cy * h)) ** 2 <= rr * rr
            continue
        if kind == "ring":
            _, cx, cy, r = prim
            pts = [(x0 + (cx + r * math.cos(t)) * w, y0 + (cy + r * math.sin(t)) * h)
                   for t in np.linspace(0, 2 * np.pi, 17)]
        else:
            pts = [(x0 + px * w, y0 + py * h) for px, py in prim[1]]
        # a shared offset per stroke plus a small wobble on interior points;
        # endpoints only move with the stroke so straight stems stay upright
        wob = rng.uniform(-0.4 * jitter, 0.4 * jitter, size=(len(pts), 2))
        if kind == "ring":
            wob[-1] = wob[0]  # keep the ring closed
        else:
            wob[[0, -1]] = 0
        jit = rng.uniform(-jitter, jitter, size=(1, 2)) + wob
        pix = [(int(round(py + jy)), int(round(px + jx))) for (px, py), (jx, jy) in zip(pts, jit)]
        for p, q in zip(pix[:-1], pix[1:]):
            for r, c in raster.bresenham(p, q):
                if 0 <= r < H and 0 <= c < W:
                    pts_mask[r, c] = True
    ink = ndimage.binary_dilation(pts_mask, structure=np.ones((stroke, stroke), bool)) | fill
    canvas |= ink
    labels[ink] = lab


@dataclass
class Sample:
    gray: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    entry: LexEntry
    skew: float = 0.0
    slant: float = 0.0
    char_spans: list = field(default_factory=list)

    @property
    def word(self) -> str:
        return self.entry.word


def render_word(alphabet: Alphabet, entry: LexEntry, rng: np.random.Generator,
                skew: float = 0.0, slant: float = 0.0) -> Sample:
    """Render one word; distortions are applied as shear then rotation."""
    a = alphabet
    s = a.stroke
    body = int(rng.integers(a.body_height[0], a.body_height[1] + 1))
    mw, mh = a.mod_size
    margin = 4
    top = margin + mh + a.mod_gap[1] + 2
    widths = rng.integers(a.glyph_width[0], a.glyph_width[1] + 1, size=len(entry.middle))
    gaps = rng.integers(a.glyph_gap[0], a.glyph_gap[1] + 1, size=max(len(entry.middle) - 1, 0))
    total_w = int(widths.sum() + gaps.sum()) + 2 * margin + 4
    total_h = top + body + a.mod_gap[1] + mh + margin + 4
    canvas = np.zeros((total_h, total_w), dtype=bool)
    labels = np.zeros_like(canvas, dtype=np.uint8)

    x = margin + 2
    spans = []
    for i, m in enumerate(entry.middle):
        w = int(widths[i])
        _stamp(canvas, labels, a.middle[m], x, top, w, body, MIDDLE, rng, a.jitter, s)
        spans.append((x, x + w))
        x += w + (int(gaps[i]) if i < len(gaps) else 0)
    # headline over the whole word, centred on the stencils' top edge
    hl0 = top - s // 2
    x_first, x_last = spans[0][0] - 2, spans[-1][1] + 2
    canvas[hl0:hl0 + s, x_first:x_last] = True
    labels[hl0:hl0 + s, x_first:x_last] = MIDDLE

    ups = dict(zip(entry.attach_upper, entry.upper))
    lows = dict(zip(entry.attach_lower, entry.lower))
    for i, sym in ups.items():
        c0, c1 = spans[i]
        cx = (c0 + c1) / 2 + rng.uniform(-2, 2)
        gap = int(rng.integers(a.mod_gap[0], a.mod_gap[1] + 1))
        y = hl0 - gap - mh
        _stamp(canvas, labels, a.upper[sym], cx - mw / 2, y, mw, mh, UPPER, rng, a.jitter * 0.5, s)
    for i, sym in lows.items():
        c0, c1 = spans[i]
        cx = (c0 + c1) / 2 + rng.uniform(-2, 2)
        gap = int(rng.integers(a.mod_gap[0], a.mod_gap[1] + 1))
        y = top + body + s // 2 + gap
        _stamp(canvas, labels, a.lower[sym], cx - mw / 2, y, mw, mh, LOWER, rng, a.jitter * 0.5, s)

    labels[~canvas] = 0
    mask, lab = canvas, labels
    if slant:
        mask = raster.shear(mask, slant)
        lab = raster.shear(lab, slant, fill=0, order=0)
    if skew:
        mask = raster.rotate(mask, skew)
        lab = raster.rotate(lab, skew, fill=0, order=0)
    mask, (r0, c0) = raster.crop_to_ink(mask, margin)
    lab = lab[r0:r0 + mask.shape[0], c0:c0 + mask.shape[1]].copy()
    lab[~mask] = 0
    gray = np.where(mask, INK, PAPER).astype(np.float64)
    gray += rng.normal(0.0, 6.0, size=gray.shape)
    gray = np.clip(np.rint(gray), 0, 255).astype(np.uint8)
    return Sample(gray, mask, lab, entry, float(skew), float(slant), spans)


def make_corpus(alphabet: Alphabet, lexicon: Lexicon, n: int, seed: int = 0,
                distort: bool = True, skew_range: float = 10.0, slant_range: float = 15.0) -> list[Sample]:
    """``n`` rendered words drawn uniformly from the lexicon.

    Sample ``i`` depends only on ``(seed, i)`` so corpora of different sizes
    share their prefixes.
    """
    pick = np.random.default_rng(seed).integers(len(lexicon), size=n)
    out = []
    for i, k in enumerate(pick):
        rng = np.random.default_rng([seed, i])
        skew = rng.uniform(-skew_range, skew_range) if distort else 0.0
        slant = rng.uniform(-slant_range, slant_range) if distort else 0.0
        out.append(render_word(alphabet, lexicon.entries[int(k)], rng, skew, slant))
    return out


# ----------------------------------------------------------------------------
# on-disk layout
# ----------------------------------------------------------------------------


def write_corpus(samples: list[Sample], outdir, split: str = "train", start: int = 0) -> list[tuple[str, str, str]]:
    """Write images, label maps and JSON truth; returns manifest rows."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, s in enumerate(samples, start):
        stem = f"{split}_{i:05d}"
        imageio.write_gray(out / f"{stem}.png", s.gray)
        imageio.write_gray(out / f"{stem}.labels.png", s.labels)
        truth = {
            "word": s.word, "upper": s.entry.upper, "middle": s.entry.middle, "lower": s.entry.lower,
            "attachments": s.entry.attachments(), "skew": s.skew, "slant": s.slant,
            "char_spans": [list(map(int, p)) for p in s.char_spans],
        }
        (out / f"{stem}.json").write_text(json.dumps(truth, sort_keys=True) + "\n", encoding="utf-8")
        rows.append((f"{stem}.png", s.word, split))
    return rows


@dataclass(frozen=True)
class ManifestRow:
    path: Path
    word: str
    split: str | None = None


def write_manifest(path, rows) -> None:
    lines = ["\t".join(r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path, check: bool = True) -> list[ManifestRow]:
    path = Path(path)
    rows = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise ValueError(f"manifest line {n}: expected 2 or 3 fields")
        p = Path(parts[0])
        if not p.is_absolute():
            p = path.parent / p
        if check and not p.exists():
            raise FileNotFoundError(f"manifest line {n}: {p} does not exist")
        rows.append(ManifestRow(p, parts[1], parts[2] if len(parts) == 3 else None))
    return rows
