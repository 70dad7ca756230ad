"""Accuracy reports and the noise experiment."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import combiner, raster, zoning
from .recognizer import Recognizer

MAX_K = 5


@dataclass
class EvalItem:
    image: np.ndarray
    word: str
    labels: np.ndarray | None = None  # ground-truth zone map, same frame as image


@dataclass
class EvalReport:
    n: int
    hits: list[int]  # hits[k-1] = words with the truth in the top k
    by_length: dict[int, tuple[int, int]]  # middle length -> (words, top-1 hits)
    char_errors: int
    char_total: int
    zone_types: list[int] = field(default_factory=lambda: [0, 0, 0])
    failures: int = 0

    @property
    def topk(self) -> list[float]:
        return [h / self.n for h in self.hits]

    @property
    def char_accuracy(self) -> float:
        if self.char_total == 0:
            return 0.0
        return max(0.0, 1.0 - self.char_errors / self.char_total)

    def length_accuracy(self) -> dict[int, float]:
        return {k: (c / n if n else 0.0) for k, (n, c) in sorted(self.by_length.items())}

    def to_text(self) -> str:
        lines = [f"words\t{self.n}"]
        lines += [f"top{k + 1}\t{a:.4f}" for k, a in enumerate(self.topk)]
        lines.append(f"char_accuracy\t{self.char_accuracy:.4f}")
        for k, (n, c) in sorted(self.by_length.items()):
            lines.append(f"length{k}\t{n}\t{c / n if n else 0.0:.4f}")
        if sum(self.zone_types):
            lines += [f"zone_type{t + 1}\t{c}" for t, c in enumerate(self.zone_types)]
        lines.append(f"failures\t{self.failures}")
        return "\n".join(lines) + "\n"


def topk_hits(rank_of_truth: list[int | None], max_k: int = MAX_K) -> list[int]:
    """``rank_of_truth`` holds 0-based ranks or ``None`` when absent."""
    return [sum(1 for r in rank_of_truth if r is not None and r < k) for k in range(1, max_k + 1)]


def zone_type_of(rec_analysis, truth_labels: np.ndarray) -> int:
    """Zone quality of one word, judged in the corrected frame."""
    truth = rec_analysis.corrected.apply(truth_labels, fill=0)
    pred = rec_analysis.split.label_map()
    return zoning.zone_type(zoning.zone_error(pred, truth))


def evaluate(items, recognizer: Recognizer, n: int = MAX_K, clean: bool = False) -> EvalReport:
    """Recognise every item and aggregate; aggregates are order independent."""
    items = list(items)
    if not items:
        raise ValueError("nothing to evaluate")
    ranks: list[int | None] = []
    by_len: dict[int, list[int]] = {}
    errs = tot = fails = 0
    ztypes = [0, 0, 0]
    for it in items:
        entry = _entry(it.word, recognizer)
        L = len(entry.middle)
        try:
            r = recognizer.recognize(it.image, max(n, MAX_K), clean)
        except ValueError:
            fails += 1
            ranks.append(None)
            errs += len(it.word)
            tot += len(it.word)
            by_len.setdefault(L, [0, 0])[0] += 1
            continue
        words = r.words
        rank = words.index(it.word) if it.word in words else None
        ranks.append(rank)
        errs += min(combiner.levenshtein(words[0], it.word), len(it.word))
        tot += len(it.word)
        b = by_len.setdefault(L, [0, 0])
        b[0] += 1
        b[1] += int(rank == 0)
        if it.labels is not None:
            ztypes[zone_type_of(r.analysis, it.labels) - 1] += 1
    return EvalReport(len(items), topk_hits(ranks), {k: (v[0], v[1]) for k, v in by_len.items()},
                      errs, tot, ztypes, fails)


def _entry(word: str, recognizer: Recognizer):
    from .recognizer import entry_for
    return entry_for(word, recognizer.lexicon)


def noisy(img: np.ndarray, level: float, seed: int, index: int) -> np.ndarray:
    if level == 0:
        return img
    return raster.add_noise(img, level, seed=[seed, int(round(level * 1000)), index])


@dataclass
class NoiseRow:
    level: float
    report: EvalReport
    delta_top1: float  # change in top-1 against level 0


def noise_experiment(items, recognizer: Recognizer, levels=(0.1, 0.2, 0.3), seed: int = 0,
                     clean: bool = True, n: int = MAX_K) -> list[NoiseRow]:
    """Evaluate at each noise level; level 0 is always included as baseline.

    With ``clean`` the smoothing and closing pre-step runs on every noisy
    word; the noise-free baseline is evaluated as is.
    """
    items = list(items)
    levels = sorted(set([0.0] + [float(l) for l in levels]))
    rows: list[NoiseRow] = []
    base = None
    for lvl in levels:
        noisy_items = [EvalItem(noisy(it.image, lvl, seed, i), it.word, it.labels) for i, it in enumerate(items)]
        rep = evaluate(noisy_items, recognizer, n, clean and lvl > 0)
        if base is None:
            base = rep.topk[0]
        rows.append(NoiseRow(lvl, rep, rep.topk[0] - base))
    return rows


def noise_table(rows: list[NoiseRow]) -> str:
    lines = ["level\ttop1\ttop5\tchar_accuracy\tdelta_top1"]
    for r in rows:
        lines.append(f"{r.level:.2f}\t{r.report.topk[0]:.4f}\t{r.report.topk[-1]:.4f}\t"
                     f"{r.report.char_accuracy:.4f}\t{r.delta_top1:+.4f}")
    return "\n".join(lines) + "\n"
