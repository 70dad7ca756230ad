"""Word recognition pipeline: preprocessing, zoning, HMM decoding, fusion."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import combiner, features, hmm, preprocess, raster, reservoir, svm, zoning
from .combiner import Lexicon, LexEntry, Ranked, ZoneLabels, ZoneTable
from .features import FeatureKind, FrameSequence, FrameSpec

REJECTS_PER_WORD = 2
SPECK_AREA = 2  # modifiers smaller than this many S_w^2 are treated as noise


def binarize(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype == bool:
        return img.copy()
    return raster.otsu_binarize(img).mask


def denoise(mask: np.ndarray) -> np.ndarray:
    """Gaussian smoothing (sigma 1) re-thresholded at 0.5, then closing.

    The closing disk has radius ``floor(S_w / 2)`` (at least 1): enough to
    rejoin strokes broken by noise without bridging the gap between a
    modifier and the headline.
    """
    if not mask.any():
        return mask
    m = raster.smooth_binary(mask, 1.0)
    if not m.any():
        return mask
    return raster.morph_close(m, max(1, raster.stroke_width(m) // 2))


@dataclass
class Analysis:
    mask: np.ndarray  # binarised input
    corrected: preprocess.Corrected
    split: zoning.ZoneSplit
    frames: FrameSequence | None
    flags: list[str] = field(default_factory=list)

    @property
    def middle(self) -> np.ndarray:
        return self.split.middle


def analyze(img: np.ndarray, classify=None, kind: FeatureKind | str = FeatureKind.PHOG,
            spec: FrameSpec = FrameSpec(), clean: bool = False) -> Analysis:
    """Binarise, optionally clean, correct, split into zones and featurise."""
    mask = binarize(img)
    if clean:
        mask = denoise(mask)
    flags: list[str] = []
    if not mask.any():
        raise ValueError("word image has no ink")
    corr = preprocess.correct(mask)
    split = zoning.split_zones(corr.mask, classify)
    flags += split.flags
    middle = split.middle
    if not middle.any():
        # degrade: recognise the whole word as its middle zone
        flags.append("middle-fallback")
        middle = corr.mask
        split.middle = middle.copy()
        split.upper = np.zeros_like(middle)
        split.lower = np.zeros_like(middle)
        split.upper_mods, split.lower_mods = [], []
    frames = features.extract(middle, kind, spec)
    return Analysis(mask, corr, split, frames, flags)


def _crop(comp: raster.Component) -> np.ndarray:
    r0, c0, r1, c1 = comp.bbox
    out = np.zeros((r1 - r0 + 1, c1 - c0 + 1), dtype=bool)
    out[comp.pixels[:, 0] - r0, comp.pixels[:, 1] - c0] = True
    return out


def _ordered(symbols: str, attach: tuple[int, ...]) -> list[str]:
    return [s for _, s in sorted(zip(attach, symbols))]


# ----------------------------------------------------------------------------
# training
# ----------------------------------------------------------------------------


@dataclass
class TrainingSet:
    kind: FeatureKind
    spec: FrameSpec
    hmm_corpus: list[tuple[np.ndarray, str]] = field(default_factory=list)
    upper: list[tuple[np.ndarray, str]] = field(default_factory=list)  # (PHOG[168], label)
    lower: list[tuple[np.ndarray, str]] = field(default_factory=list)
    skipped_upper: int = 0
    skipped_lower: int = 0


def lower_top(split: zoning.ZoneSplit) -> int:
    body = split.middle | split.lower
    bottom = int(np.flatnonzero(body.any(axis=1)).max()) if body.any() else split.row
    return (split.row + bottom + 1) // 2


def collect_training(items, kind: FeatureKind | str = FeatureKind.PHOG, spec: FrameSpec = FrameSpec(),
                     clean: bool = False, rejects: bool = True, modifiers: bool = True) -> TrainingSet:
    """Frames and modifier glyphs from ``(image, LexEntry)`` pairs.

    Modifier glyphs are labelled by order: when the zoner finds as many
    upper (lower) modifiers as the transcription has, they are paired left
    to right; otherwise the word contributes none for that zone.  With
    ``rejects``, pieces the touching-modifier search cuts off word bodies
    become examples of the lower zone's reject class.
    """
    kind = FeatureKind(kind)
    ts = TrainingSet(kind, spec)
    for img, entry in items:
        a = analyze(img, None, kind, spec, clean)
        ts.hmm_corpus.append((a.frames.frames, entry.middle))
        sp = a.split
        if not modifiers:
            continue
        ups = _ordered(entry.upper, entry.attach_upper)
        if len(sp.upper_mods) == len(ups):
            ts.upper += [(svm.glyph_features(_crop(m.component)), s) for m, s in zip(sp.upper_mods, ups)]
        else:
            ts.skipped_upper += 1
        lows = _ordered(entry.lower, entry.attach_lower)
        if len(sp.lower_mods) == len(lows):
            ts.lower += [(svm.glyph_features(_crop(m.component)), s) for m, s in zip(sp.lower_mods, lows)]
        else:
            ts.skipped_lower += 1
        if rejects and sp.middle.any():
            skel = raster.skeletonize(sp.middle)
            pieces = zoning.touching_candidates(sp.middle, skel, lower_top(sp))
            for piece in pieces[:REJECTS_PER_WORD]:
                ys, xs = np.nonzero(piece)
                ts.lower.append((svm.glyph_features(piece[ys.min():ys.max() + 1, xs.min():xs.max() + 1]),
                                 zoning.REJECT))
    return ts


@dataclass
class Models:
    hmm: hmm.ModelSet
    upper: svm.SvmModel | None
    lower: svm.SvmModel | None
    spec: FrameSpec = field(default_factory=FrameSpec)

    @property
    def kind(self) -> FeatureKind:
        return FeatureKind(self.hmm.kind)

    def save(self, outdir) -> None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        hmm.save_models(out / "middle.zhmm", self.hmm)
        for name, m in (("upper", self.upper), ("lower", self.lower)):
            if m is not None:
                svm.save_svm(out / f"{name}.zsvm", m)
        cfg = {"norm_height": self.spec.norm_height, "win_width": self.spec.win_width, "step": self.spec.step}
        (out / "frames.json").write_text(json.dumps(cfg, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, indir) -> "Models":
        d = Path(indir)
        if not (d / "middle.zhmm").exists():
            raise FileNotFoundError(f"no middle-zone model in {d}")
        spec = FrameSpec()
        if (d / "frames.json").exists():
            spec = FrameSpec(**json.loads((d / "frames.json").read_text(encoding="utf-8")))
        up = svm.load_svm(d / "upper.zsvm") if (d / "upper.zsvm").exists() else None
        lo = svm.load_svm(d / "lower.zsvm") if (d / "lower.zsvm").exists() else None
        return cls(hmm.load_models(d / "middle.zhmm"), up, lo, spec)


def fit_svm(samples, C: float | None = None, gamma: float | None = None, val_every: int = 5,
            platt_folds: int = 3) -> svm.SvmModel | None:
    """Train a modifier SVM; without ``C``/``gamma`` they come from grid search.

    Every ``val_every``-th sample is held out for the search.
    """
    if not samples:
        return None
    X = np.array([x for x, _ in samples])
    y = [l for _, l in samples]
    if len(set(y)) < 2:
        return None
    if C is None or gamma is None:
        idx = np.arange(len(y))
        va = idx % val_every == val_every - 1
        ytr = [y[i] for i in idx[~va]]
        yva = [y[i] for i in idx[va]]
        if len(set(ytr)) < 2 or not yva:
            C, gamma = C or 1.0, gamma or 1.0
        else:
            C, gamma = svm.grid_search((X[~va], ytr), (X[va], yva))
    return svm.train_svm(X, y, C, gamma, platt_folds)


def train_hmm(ts: TrainingSet, config: hmm.TrainConfig | None = None,
              log: hmm.TrainLog | None = None) -> hmm.ModelSet:
    ms = hmm.train_embedded(ts.hmm_corpus, config, kind=ts.kind.value, log=log)
    ms.meta.update({"norm_height": ts.spec.norm_height, "win_width": ts.spec.win_width, "step": ts.spec.step})
    return ms


def spec_from_meta(ms: hmm.ModelSet) -> FrameSpec:
    d = FrameSpec()
    return FrameSpec(ms.meta.get("norm_height", d.norm_height), ms.meta.get("win_width", d.win_width),
                     ms.meta.get("step", d.step))


def train_models(ts: TrainingSet, config: hmm.TrainConfig | None = None,
                 svm_params: dict | None = None, log: hmm.TrainLog | None = None) -> Models:
    sp = svm_params or {}
    ms = train_hmm(ts, config, log)
    up = fit_svm(ts.upper, sp.get("upper_C"), sp.get("upper_gamma"))
    lo = fit_svm(ts.lower, sp.get("lower_C"), sp.get("lower_gamma"))
    return Models(ms, up, lo, ts.spec)


# ----------------------------------------------------------------------------
# recognition
# ----------------------------------------------------------------------------


@dataclass
class Recognition:
    ranked: list[Ranked]
    hypotheses: list[tuple[str, float]]
    analysis: Analysis
    upper: list[tuple[str, tuple[int, int]]]
    lower: list[tuple[str, tuple[int, int]]]
    candidates: list[combiner.AssociatedWord]

    @property
    def words(self) -> list[str]:
        return [r.word for r in self.ranked]

    @property
    def best(self) -> str:
        return self.ranked[0].word


def depth_columns(mask: np.ndarray) -> list[int]:
    """Columns of depth points of the filtered bottom reservoirs."""
    if not mask.any():
        return []
    s_w = raster.stroke_width(mask)
    rs = reservoir.filter_reservoirs(reservoir.bottom_reservoirs(mask), s_w)
    return sorted({int(c) for r in rs for _, c in reservoir.depth_points(r)})


def plausible_modifiers(mods, s_w: int, limit: int) -> list:
    """Drop speck-sized modifiers and keep at most ``limit`` of the largest.

    Every character binds at most one modifier per zone, so more than
    ``limit`` can never all be used; noise specks would otherwise blow up
    the association search.
    """
    big = [m for m in mods if len(m.component.pixels) >= SPECK_AREA * s_w * s_w]
    if len(big) > limit:
        keep = sorted(range(len(big)), key=lambda i: (-len(big[i].component.pixels), i))[:limit]
        big = [big[i] for i in sorted(keep)]
    return big


def uniform_spans(n: int, x0: int, width: int) -> list[tuple[int, int]]:
    edges = [x0 + int(round(width * k / n)) for k in range(n + 1)]
    return [(edges[k], edges[k + 1]) for k in range(n)]


class Recognizer:
    """Models plus a lexicon with the middle-zone decoder prepared once."""

    def __init__(self, models: Models, lexicon: Lexicon):
        if lexicon.table is None:
            raise ValueError("lexicon needs a zone table")
        self.models = models
        self.lexicon = lexicon
        self.table: ZoneTable = lexicon.table
        self.decoder = hmm.Decoder(models.hmm, lexicon.middle_projection)

    def _labels(self, mods, model: svm.SvmModel | None, drop_reject: bool, s_w: int, limit: int):
        out = []
        for m in plausible_modifiers(mods, s_w, limit):
            if m.label is not None:
                out.append((m.label, m.span))
                continue
            if model is None:
                continue
            lab = model.predict(_crop(m.component))
            if drop_reject and lab == zoning.REJECT:
                continue
            out.append((lab, m.span))
        return out

    def recognize(self, img: np.ndarray, n: int = 5, clean: bool = False) -> Recognition:
        if n < 1:
            raise ValueError("n must be >= 1")
        m = self.models
        a = analyze(img, m.lower, m.kind, m.spec, clean)
        seq = a.frames
        hyps = self.decoder.nbest(seq.frames, n)
        s_w = raster.stroke_width(a.corrected.mask)
        limit = max(len(h) for h, _ in hyps)
        upper = self._labels(a.split.upper_mods, m.upper, False, s_w, limit)
        lower = self._labels(a.split.lower_mods, m.lower, True, s_w, limit)
        cols = np.flatnonzero(a.middle.any(axis=0))
        x0, width = int(cols[0]), int(cols[-1] - cols[0] + 1)
        depth = depth_columns(a.middle)
        cands: list[combiner.AssociatedWord] = []
        for k, (h, _) in enumerate(hyps):
            try:
                al = hmm.forced_align(seq.frames, h, m.hmm, self.decoder.table)
                cb = combiner.frames_to_columns(al.spans, m.spec, seq.scale, width, x0)
            except ValueError:
                cb = combiner.CharBoundary(uniform_spans(len(h), x0, width), [False] * len(h))
            cb = combiner.snap_boundaries(cb, depth)
            cands += combiner.associate(ZoneLabels(h, cb.spans, upper, lower), self.table, source=k)
        ranked = combiner.rank_against_lexicon(cands, self.lexicon, [s for _, s in hyps], n)
        return Recognition(ranked, hyps, a, upper, lower, cands)


def recognize_word(img, models: Models, lexicon: Lexicon, n: int = 5, clean: bool = False) -> Recognition:
    return Recognizer(models, lexicon).recognize(img, n, clean)


def entry_for(word: str, lexicon: Lexicon) -> LexEntry:
    for e in lexicon.entries:
        if e.word == word:
            return e
    if lexicon.table is None:
        raise KeyError(word)
    return lexicon.table.decompose(word)
