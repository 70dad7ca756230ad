"""Fusing zone-wise results into full words.

Covers the zone decomposition table, the zone-decomposed lexicon, mapping
HMM frame boundaries to pixel columns, reservoir-based boundary snapping,
the flexible +-1 modifier association, and Levenshtein lexicon ranking.

Symbols are single code points.  A full word is a sequence of clusters;
each cluster has one or more middle symbols plus optional upper and lower
modifiers.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from . import kernels

MAX_ASSOCIATIONS = 512


# ----------------------------------------------------------------------------
# zone table and lexicon
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Cluster:
    text: str
    upper: str
    middle: str
    lower: str
    attach: int = 0


class ZoneTable:
    """Maps grapheme clusters to their (upper, middle, lower) decomposition.

    File format, one cluster per line, tab separated::

        cluster  upper  middle  lower  attach

    ``attach`` is the index inside ``middle`` that the modifiers belong to.
    Lines starting with ``#`` are comments.
    """

    def __init__(self, clusters: list[Cluster]):
        self.clusters = {c.text: c for c in clusters}
        self._by_parts: dict[tuple[str, str, str, int], str] = {}
        for c in clusters:
            self._by_parts.setdefault((c.upper, c.middle, c.lower, c.attach), c.text)
        self._maxlen = max((len(t) for t in self.clusters), default=1)
        self._maxmid = max((len(c.middle) for c in clusters), default=1)

    @classmethod
    def load(cls, path) -> "ZoneTable":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def parse(cls, text: str) -> "ZoneTable":
        rows = []
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ValueError(f"zone table line {n}: expected 5 fields, got {len(parts)}")
            text_, up, mid, low, att = parts
            if not mid:
                raise ValueError(f"zone table line {n}: empty middle part")
            rows.append(Cluster(text_, up, mid, low, int(att)))
        return cls(rows)

    @classmethod
    def builtin(cls, name: str) -> "ZoneTable":
        ref = resources.files("zonerec") / "data" / f"{name}.tsv"
        return cls.parse(ref.read_text(encoding="utf-8"))

    @classmethod
    def from_symbols(cls, middle: str, upper: str, lower: str) -> "ZoneTable":
        """Table for an alphabet whose clusters are ``middle + upper + lower``."""
        rows = []
        for m in middle:
            for u in [""] + list(upper):
                for l in [""] + list(lower):
                    rows.append(Cluster(m + u + l, u, m, l, 0))
        return cls(rows)

    def dumps(self) -> str:
        lines = [f"{c.text}\t{c.upper}\t{c.middle}\t{c.lower}\t{c.attach}"
                 for c in self.clusters.values()]
        return "\n".join(lines) + "\n"

    def split_clusters(self, word: str) -> list[Cluster]:
        """Greedy longest-match segmentation of a full word into clusters."""
        out = []
        i = 0
        while i < len(word):
            for n in range(min(self._maxlen, len(word) - i), 0, -1):
                c = self.clusters.get(word[i:i + n])
                if c is not None:
                    out.append(c)
                    i += n
                    break
            else:
                raise ValueError(f"cannot decompose {word!r} at position {i}")
        return out

    def compose(self, middle: str, upper: dict[int, str] | None = None,
                lower: dict[int, str] | None = None) -> str:
        """Full word from a middle string and per-character modifiers."""
        upper = upper or {}
        lower = lower or {}
        parts = []
        i = 0
        while i < len(middle):
            for n in range(min(self._maxmid, len(middle) - i), 0, -1):
                idx = [j for j in range(i, i + n) if j in upper or j in lower]
                if len(idx) > 1:
                    continue
                att = idx[0] - i if idx else 0
                u = upper.get(i + att, "")
                l = lower.get(i + att, "")
                text = self._by_parts.get((u, middle[i:i + n], l, att))
                if text is None and not idx:
                    text = self._by_parts.get((u, middle[i:i + n], l, 0))
                if text is not None:
                    parts.append(text)
                    i += n
                    break
            else:
                parts.append(middle[i] + upper.get(i, "") + lower.get(i, ""))
                i += 1
        return "".join(parts)

    def decompose(self, word: str) -> "LexEntry":
        up, mid, low, au, al = [], [], [], [], []
        for c in self.split_clusters(word):
            base = len(mid)
            for s in c.upper:
                up.append(s)
                au.append(base + c.attach)
            for s in c.lower:
                low.append(s)
                al.append(base + c.attach)
            mid.extend(c.middle)
        return LexEntry(word, "".join(up), "".join(mid), "".join(low), tuple(au), tuple(al))


@dataclass(frozen=True)
class LexEntry:
    word: str
    upper: str
    middle: str
    lower: str
    attach_upper: tuple[int, ...] = ()
    attach_lower: tuple[int, ...] = ()

    def attachments(self) -> str:
        return ",".join([f"u{i}" for i in self.attach_upper] + [f"l{i}" for i in self.attach_lower])

    def to_line(self) -> str:
        return f"{self.word}\t{self.upper}\t{self.middle}\t{self.lower}\t{self.attachments()}"


def _parse_attachments(s: str, n_up: int, n_low: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    au, al = [], []
    for tok in filter(None, (t.strip() for t in s.split(","))):
        if tok[0] not in "ul":
            raise ValueError(f"bad attachment token {tok!r}")
        (au if tok[0] == "u" else al).append(int(tok[1:]))
    if len(au) != n_up or len(al) != n_low:
        raise ValueError(f"attachment list {s!r} does not match modifier counts")
    return tuple(au), tuple(al)


class Lexicon:
    def __init__(self, entries: list[LexEntry], table: ZoneTable | None = None):
        if not entries:
            raise ValueError("empty lexicon")
        self.entries = list(entries)
        self.table = table
        self.middle_projection = sorted({e.middle for e in self.entries})
        self.words = [e.word for e in self.entries]
        self._codes = [_codes(w) for w in self.words]
        if table is not None:
            for e in self.entries:
                up = {i: s for i, s in zip(e.attach_upper, e.upper)}
                lo = {i: s for i, s in zip(e.attach_lower, e.lower)}
                if table.compose(e.middle, up, lo) != e.word:
                    raise ValueError(f"entry {e.word!r} does not recompose under the zone table")

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_words(cls, words, table: ZoneTable) -> "Lexicon":
        return cls([table.decompose(w) for w in words], table)

    @classmethod
    def load(cls, path, table: ZoneTable | None = None) -> "Lexicon":
        entries = []
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ValueError(f"lexicon line {n}: expected 5 fields")
            w, up, mid, low, att = parts
            au, al = _parse_attachments(att, len(up), len(low))
            entries.append(LexEntry(w, up, mid, low, au, al))
        return cls(entries, table)

    def save(self, path) -> None:
        Path(path).write_text("".join(e.to_line() + "\n" for e in self.entries), encoding="utf-8")


def decomposition_stats(x: int, y: int, z: int) -> tuple[int, int, float, bool]:
    """Class counts without and with zoning.

    ``x`` upper modifiers, ``y`` middle characters, ``z`` lower modifiers.
    Returns ``(x*y + y*z, x + y + z, reduction, undefined)`` where reduction is
    a fraction and ``undefined`` flags a zero denominator.
    """
    if min(x, y, z) < 0:
        raise ValueError("class counts must be non-negative")
    combined = x * y + y * z
    zoned = x + y + z
    if combined == 0:
        return combined, zoned, 0.0, True
    return combined, zoned, 1.0 - zoned / combined, False


# ----------------------------------------------------------------------------
# boundaries
# ----------------------------------------------------------------------------


@dataclass
class CharBoundary:
    spans: list[tuple[int, int]]  # half-open column spans
    snapped: list[bool] = field(default_factory=list)

    @property
    def cuts(self) -> list[int]:
        return [s[1] for s in self.spans[:-1]]


def frames_to_columns(alignment, spec, scale: float, width: int, x_offset: int = 0) -> CharBoundary:
    """Map half-open frame spans to half-open column spans in word coordinates.

    A cut after frame ``e`` lands on column ``(e*step + win/2) / scale``.
    """
    spans = []
    start = x_offset
    n = len(alignment)
    for i, (_, e) in enumerate(alignment):
        if i == n - 1:
            end = x_offset + width
        else:
            end = int(round((e * spec.step + spec.win_width / 2) / scale)) + x_offset
            end = min(max(end, start), x_offset + width)
        spans.append((start, end))
        start = end
    return CharBoundary(spans, [False] * n)


def _boundaries_from_cuts(first: int, cuts: list[int], last: int) -> list[tuple[int, int]]:
    edges = [first] + list(cuts) + [last]
    return [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]


def snap_boundaries(b: CharBoundary, depth_cols, radius: float | None = None) -> CharBoundary:
    """Move each internal cut to the nearest reservoir depth column.

    A cut moves only when the depth column lies within ``radius`` (default:
    half the mean character span) and the move keeps cuts strictly ordered.
    """
    depth = np.sort(np.asarray(list(depth_cols), dtype=np.float64))
    cuts = b.cuts
    if not cuts or depth.size == 0:
        return CharBoundary(list(b.spans), [False] * len(b.spans))
    first, last = b.spans[0][0], b.spans[-1][1]
    if radius is None:
        radius = 0.5 * (last - first) / len(b.spans)
    new = list(cuts)
    moved = [False] * len(cuts)
    for i, c in enumerate(cuts):
        d = depth[np.argmin(np.abs(depth - c))]  # first minimum: left on ties
        if abs(d - c) > radius:
            continue
        lo = new[i - 1] if i > 0 else first
        hi = cuts[i + 1] if i + 1 < len(cuts) else last
        d = int(d)
        if lo < d < hi:
            new[i] = d
            moved[i] = d != c
    return CharBoundary(_boundaries_from_cuts(first, new, last), moved + [False])


# ----------------------------------------------------------------------------
# association
# ----------------------------------------------------------------------------


@dataclass
class ZoneLabels:
    middle: str
    spans: list[tuple[int, int]]
    upper: list[tuple[str, tuple[int, int]]] = field(default_factory=list)
    lower: list[tuple[str, tuple[int, int]]] = field(default_factory=list)


@dataclass(frozen=True)
class AssociatedWord:
    text: str
    upper_targets: tuple  # per upper modifier: char index or None (dropped)
    lower_targets: tuple
    source: int = 0
    displaced: int = 0


def home_index(spans: list[tuple[int, int]], center: float) -> int:
    """Character whose span holds ``center``; the nearest span otherwise."""
    best, best_d = 0, math.inf
    for i, (s, e) in enumerate(spans):
        if s <= center < e:
            return i
        d = min(abs(center - s), abs(center - (e - 1)))
        if d < best_d:
            best, best_d = i, d
    return best


def _zone_assignments(homes: list[int], n: int) -> list[tuple]:
    """All injective +-1 assignments of modifiers to characters.

    Falls back to maximum-cardinality partial assignments (``None`` marks a
    dropped modifier) when no complete one exists.
    """
    options = [[h + d for d in (0, -1, 1) if 0 <= h + d < n] for h in homes]
    best: list[tuple] = []
    best_size = -1

    def rec(k, used, acc):
        nonlocal best, best_size
        if k == len(homes):
            size = sum(t is not None for t in acc)
            if size > best_size:
                best, best_size = [tuple(acc)], size
            elif size == best_size:
                best.append(tuple(acc))
            return
        # remaining modifiers can add at most len(homes) - k
        if sum(t is not None for t in acc) + len(homes) - k < best_size:
            return
        for t in options[k]:
            if t not in used:
                used.add(t)
                acc.append(t)
                rec(k + 1, used, acc)
                acc.pop()
                used.discard(t)
        acc.append(None)
        rec(k + 1, used, acc)
        acc.pop()

    rec(0, set(), [])
    return best


def _displacement(targets: tuple, homes: list[int]) -> int:
    return sum(1 for t, h in zip(targets, homes) if t is not None and t != h)


def associate(z: ZoneLabels, table: ZoneTable | None = None, source: int = 0,
              cap: int = MAX_ASSOCIATIONS) -> list[AssociatedWord]:
    """Enumerate candidate full words for one middle-zone hypothesis.

    Each modifier is indexed by the span its centre column falls in and may
    bind to that character or a direct neighbour; every character takes at
    most one upper and one lower modifier.  Candidates are ordered by the
    number of neighbour-displaced bindings, then by target tuples, and capped.
    """
    n = len(z.middle)
    if n == 0:
        raise ValueError("empty middle string")
    up_home = [home_index(z.spans, (s + e) / 2) for _, (s, e) in z.upper]
    lo_home = [home_index(z.spans, (s + e) / 2) for _, (s, e) in z.lower]
    ua = _zone_assignments(up_home, n)
    la = _zone_assignments(lo_home, n)
    combos = sorted(
        itertools.product(ua, la),
        key=lambda p: (_displacement(p[0], up_home) + _displacement(p[1], lo_home),
                       tuple(-1 if t is None else t for t in p[0]),
                       tuple(-1 if t is None else t for t in p[1])),
    )[:cap]
    out = []
    for ut, lt in combos:
        up = {t: z.upper[k][0] for k, t in enumerate(ut) if t is not None}
        lo = {t: z.lower[k][0] for k, t in enumerate(lt) if t is not None}
        if table is not None:
            text = table.compose(z.middle, up, lo)
        else:
            text = "".join(m + up.get(i, "") + lo.get(i, "") for i, m in enumerate(z.middle))
        disp = _displacement(ut, up_home) + _displacement(lt, lo_home)
        out.append(AssociatedWord(text, ut, lt, source, disp))
    return out


# ----------------------------------------------------------------------------
# lexicon matching
# ----------------------------------------------------------------------------


@lru_cache(maxsize=65536)
def _codes(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-32-le"), dtype=np.uint32).astype(np.int64)


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance over code points."""
    return kernels.levenshtein_codes(_codes(a), _codes(b))


@dataclass(frozen=True)
class Ranked:
    word: str
    distance: int
    score: float
    candidate: str


def rank_against_lexicon(candidates: list[AssociatedWord], lex: Lexicon,
                         hyp_scores, n: int | None = None) -> list[Ranked]:
    """Rank lexicon entries by their best match over all candidates.

    Key per entry is (distance, -HMM score of the source hypothesis, word).
    """
    if not candidates:
        raise ValueError("no candidates to rank")
    best: dict[str, tuple] = {}
    seen: set[tuple[str, int]] = set()
    for cand in candidates:
        if (cand.text, cand.source) in seen:
            continue
        seen.add((cand.text, cand.source))
        sc = float(hyp_scores[cand.source])
        cc = _codes(cand.text)
        for w, wc in zip(lex.words, lex._codes):
            d = kernels.levenshtein_codes(cc, wc)
            key = (d, -sc, w)
            cur = best.get(w)
            if cur is None or key < cur[0]:
                best[w] = (key, cand.text)
    order = sorted(best.values(), key=lambda v: v[0])
    if n is not None:
        order = order[:n]
    return [Ranked(k[2], k[0], -k[1], text) for k, text in order]
