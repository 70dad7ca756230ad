"""Command-line entry point: ``zonerec <command> ...``.

Exit codes: 0 success, 2 input error (bad arguments or files), 3 model error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import combiner, evaluation, features, hmm, imageio, preprocess, raster, svm, synth, zoning
from . import recognizer as rec
from .combiner import Lexicon, ZoneTable
from .features import FeatureKind

EXIT_OK, EXIT_INPUT, EXIT_MODEL = 0, 2, 3


class InputError(Exception):
    pass


class ModelError(Exception):
    pass


# ----------------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------------


def _table(name: str) -> ZoneTable:
    p = Path(name)
    if p.exists():
        return ZoneTable.load(p)
    try:
        return ZoneTable.builtin(name)
    except FileNotFoundError:
        raise InputError(f"unknown zone table {name!r}") from None


def _lexicon(path, table_name: str) -> Lexicon:
    if not Path(path).exists():
        raise InputError(f"lexicon {path} not found")
    return Lexicon.load(path, _table(table_name))


def _image(path) -> np.ndarray:
    if not Path(path).exists():
        raise InputError(f"image {path} not found")
    return imageio.read_gray(path)


def _rows(manifest, split: str | None):
    try:
        rows = synth.read_manifest(manifest)
    except FileNotFoundError as e:
        raise InputError(str(e)) from None
    if split:
        rows = [r for r in rows if r.split == split]
    if not rows:
        raise InputError(f"no manifest rows for split {split!r}")
    return rows


def _labels_for(path: Path) -> np.ndarray | None:
    lab = path.with_name(path.stem + ".labels.png")
    return imageio.read_gray(lab) if lab.exists() else None


def _load(fn, path):
    if path is None:
        return None
    if not Path(path).exists():
        raise ModelError(f"model file {path} not found")
    try:
        return fn(path)
    except ValueError as e:
        raise ModelError(str(e)) from None


def _models(args) -> rec.Models:
    if not args.hmm:
        raise ModelError("a middle-zone model (--hmm) is required")
    ms = _load(hmm.load_models, args.hmm)
    up = _load(svm.load_svm, args.svm_upper)
    lo = _load(svm.load_svm, args.svm_lower)
    return rec.Models(ms, up, lo, rec.spec_from_meta(ms))


def _spec(args) -> features.FrameSpec:
    return features.FrameSpec(args.norm_height, args.win, args.step)


def _write(path, text: str) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    alphabet = synth.Alphabet()
    lex = synth.make_lexicon(alphabet, args.lexicon_size, seed=args.seed)
    rows = []
    splits = (("train", args.n_train), ("val", args.n_val), ("test", args.n_test))
    for k, (name, n) in enumerate(splits):
        if n <= 0:
            continue
        samples = synth.make_corpus(alphabet, lex, n, seed=args.seed * 10 + k + 1, distort=not args.no_distort)
        rows += synth.write_corpus(samples, out, name)
    synth.write_manifest(out / "manifest.tsv", rows)
    lex.save(out / "lexicon.tsv")
    (out / "table.tsv").write_text(lex.table.dumps(), encoding="utf-8")
    print(f"wrote {len(rows)} images, lexicon of {len(lex)} words to {out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    mask = rec.binarize(_image(args.image))
    if args.clean:
        mask = rec.denoise(mask)
    if not mask.any():
        raise InputError("image has no ink")
    c = preprocess.correct(mask)
    if args.out:
        imageio.write_gray(args.out, np.where(c.mask, 0, 255).astype(np.uint8))
    print(json.dumps({"skew": c.theta, "slant": c.phi, "skew_fallback": c.skew_fallback}, sort_keys=True))
    return EXIT_OK


def cmd_zones(args) -> int:
    mask = rec.binarize(_image(args.image))
    if not mask.any():
        raise InputError("image has no ink")
    c = preprocess.correct(mask)
    z = zoning.split_zones(c.mask)
    if args.out:
        layers = {"upper": z.upper, "lower": z.lower}
        m = np.zeros_like(z.middle)
        cols = np.flatnonzero(z.matra.rows >= 0)
        m[z.matra.rows[cols], cols] = True
        layers["matra"] = m
        imageio.write_rgb(args.out, imageio.overlay(c.mask, layers))
    info = {"row": z.row, "branch": z.branch, "flags": z.flags,
            "upper_modifiers": [list(m.span) for m in z.upper_mods],
            "lower_modifiers": [list(m.span) for m in z.lower_mods]}
    print(json.dumps(info, sort_keys=True))
    return EXIT_OK


def cmd_featurize(args) -> int:
    a = rec.analyze(_image(args.image), None, args.feature, _spec(args), args.clean)
    features.save(args.out, a.frames)
    print(f"{len(a.frames)} frames x {a.frames.dim} ({a.frames.kind.value}) -> {args.out}")
    return EXIT_OK


def _training(args, modifiers: bool) -> rec.TrainingSet:
    lex = _lexicon(args.lexicon, args.table)
    rows = _rows(args.manifest, args.split)
    items = [(_image(r.path), rec.entry_for(r.word, lex)) for r in rows]
    return rec.collect_training(items, args.feature, _spec(args), args.clean, modifiers=modifiers)


def cmd_train_hmm(args) -> int:
    ts = _training(args, False)
    cfg = hmm.TrainConfig(states=args.states, mixtures=args.mixtures, iterations=args.iterations)
    log = hmm.TrainLog()
    ms = rec.train_hmm(ts, cfg, log)
    hmm.save_models(args.out, ms)
    for m, it, ll in log.history:
        print(f"mixtures {m}\titeration {it}\tloglik {ll:.6f}")
    return EXIT_OK


def cmd_train_svm(args) -> int:
    ts = _training(args, True)
    samples = ts.upper if args.zone == "upper" else ts.lower
    if len({l for _, l in samples}) < 2:
        raise InputError(f"fewer than two {args.zone} modifier classes found")
    if args.grid == "none":
        m = rec.fit_svm(samples, args.C, args.gamma)
    else:
        X = np.array([x for x, _ in samples])
        y = [l for _, l in samples]
        va = np.arange(len(y)) % 5 == 4
        C, g = svm.grid_search((X[~va], [y[i] for i in np.flatnonzero(~va)]),
                               (X[va], [y[i] for i in np.flatnonzero(va)]), fine=args.grid == "coarse+fine")
        m = svm.train_svm(X, y, C, g)
    svm.save_svm(args.out, m)
    print(f"{args.zone}: {len(samples)} samples, classes {' '.join(m.labels)}, C={m.C:g} gamma={m.gamma:g}")
    return EXIT_OK


def cmd_recognize(args) -> int:
    models = _models(args)
    lex = _lexicon(args.lexicon, args.table)
    try:
        r = rec.Recognizer(models, lex)
    except ValueError as e:
        raise ModelError(str(e)) from None
    lines = []
    for path in args.images:
        res = r.recognize(_image(path), args.nbest, args.clean)
        for k, x in enumerate(res.ranked, 1):
            lines.append(f"{path}\t{k}\t{x.word}\t{x.distance}\t{x.score:.4f}")
    _write(args.report, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_align(args) -> int:
    models = _models(args)
    a = rec.analyze(_image(args.image), None, models.kind, models.spec, args.clean)
    try:
        al = hmm.forced_align(a.frames.frames, args.transcription, models.hmm)
    except ValueError as e:
        raise InputError(str(e)) from None
    cols = np.flatnonzero(a.middle.any(axis=0))
    cb = combiner.frames_to_columns(al.spans, models.spec, a.frames.scale, int(cols[-1] - cols[0] + 1), int(cols[0]))
    cb = combiner.snap_boundaries(cb, rec.depth_columns(a.middle))
    lines = [f"{ch}\t{f0}\t{f1}\t{c0}\t{c1}" for ch, (f0, f1), (c0, c1) in zip(args.transcription, al.spans, cb.spans)]
    _write(args.report, "\n".join(lines) + "\n")
    return EXIT_OK


def _eval_items(args):
    rows = _rows(args.manifest, args.split)
    return [evaluation.EvalItem(_image(r.path), r.word, _labels_for(r.path)) for r in rows]


def cmd_evaluate(args) -> int:
    models = _models(args)
    lex = _lexicon(args.lexicon, args.table)
    rep = evaluation.evaluate(_eval_items(args), rec.Recognizer(models, lex), args.nbest, args.clean)
    _write(args.report, rep.to_text())
    return EXIT_OK


def cmd_noise(args) -> int:
    models = _models(args)
    lex = _lexicon(args.lexicon, args.table)
    try:
        levels = [float(x) for x in args.levels.split(",") if x]
    except ValueError:
        raise InputError(f"bad noise levels {args.levels!r}") from None
    rows = evaluation.noise_experiment(_eval_items(args), rec.Recognizer(models, lex), levels, args.seed,
                                       clean=not args.no_clean, n=args.nbest)
    _write(args.report, evaluation.noise_table(rows))
    return EXIT_OK


def cmd_stats(args) -> int:
    combined, zoned, red, undefined = combiner.decomposition_stats(args.x, args.y, args.z)
    if undefined:
        print(f"combined {combined}\tzoned {zoned}\treduction undefined")
    else:
        print(f"combined {combined}\tzoned {zoned}\treduction {100 * red:.2f}%")
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------------


def _frame_opts(p):
    p.add_argument("--feature", default="phog", choices=[k.value for k in FeatureKind])
    p.add_argument("--norm-height", type=int, default=40)
    p.add_argument("--win", type=int, default=6)
    p.add_argument("--step", type=int, default=3)


def _model_opts(p):
    p.add_argument("--hmm", help="middle-zone model file")
    p.add_argument("--svm-upper")
    p.add_argument("--svm-lower")


def _lex_opts(p):
    p.add_argument("--lexicon", required=True)
    p.add_argument("--table", default="toy", help="builtin table name or path")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zonerec", description="Zone-based word recognition")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-val", type=int, default=0)
    p.add_argument("--n-test", type=int, default=400)
    p.add_argument("--lexicon-size", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-distort", action="store_true")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("preprocess", help="skew and slant correction")
    p.add_argument("image")
    p.add_argument("--out")
    p.add_argument("--clean", action="store_true")
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("zones", help="zone segmentation")
    p.add_argument("image")
    p.add_argument("--out", help="overlay PNG")
    p.set_defaults(fn=cmd_zones)

    p = sub.add_parser("featurize", help="middle-zone frame features")
    p.add_argument("image")
    p.add_argument("--out", required=True)
    p.add_argument("--clean", action="store_true")
    _frame_opts(p)
    p.set_defaults(fn=cmd_featurize)

    for name, fn in (("train-hmm", cmd_train_hmm), ("train-svm", cmd_train_svm)):
        p = sub.add_parser(name)
        p.add_argument("--manifest", required=True)
        p.add_argument("--split", default="train")
        p.add_argument("--out", required=True)
        p.add_argument("--clean", action="store_true")
        p.add_argument("--seed", type=int, default=0)
        _lex_opts(p)
        _frame_opts(p)
        if name == "train-hmm":
            p.add_argument("--states", type=int, default=8)
            p.add_argument("--mixtures", type=int, default=32)
            p.add_argument("--iterations", type=int, default=4)
        else:
            p.add_argument("--zone", choices=["upper", "lower"], required=True)
            p.add_argument("--grid", choices=["coarse+fine", "coarse", "none"], default="coarse+fine")
            p.add_argument("--C", type=float, default=1.0)
            p.add_argument("--gamma", type=float, default=1.0)
        p.set_defaults(fn=fn)

    p = sub.add_parser("recognize")
    p.add_argument("images", nargs="+")
    p.add_argument("--nbest", type=int, default=5)
    p.add_argument("--report")
    p.add_argument("--clean", action="store_true")
    _model_opts(p)
    _lex_opts(p)
    p.set_defaults(fn=cmd_recognize)

    p = sub.add_parser("align", help="forced alignment of a known middle-zone string")
    p.add_argument("image")
    p.add_argument("--transcription", required=True)
    p.add_argument("--report")
    p.add_argument("--clean", action="store_true")
    _model_opts(p)
    p.set_defaults(fn=cmd_align)

    for name, fn in (("evaluate", cmd_evaluate), ("noise", cmd_noise)):
        p = sub.add_parser(name)
        p.add_argument("--manifest", required=True)
        p.add_argument("--split", default="test")
        p.add_argument("--nbest", type=int, default=5)
        p.add_argument("--report")
        p.add_argument("--seed", type=int, default=0)
        _model_opts(p)
        _lex_opts(p)
        if name == "evaluate":
            p.add_argument("--clean", action="store_true")
        else:
            p.add_argument("--levels", default="0.1,0.2,0.3")
            p.add_argument("--no-clean", action="store_true")
        p.set_defaults(fn=fn)

    p = sub.add_parser("stats", help="class counts with and without zoning")
    p.add_argument("x", type=int, help="upper modifiers")
    p.add_argument("y", type=int, help="middle characters")
    p.add_argument("z", type=int, help="lower modifiers")
    p.set_defaults(fn=cmd_stats)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    try:
        return args.fn(args)
    except ModelError as e:
        print(f"zonerec: model error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except (InputError, ValueError, FileNotFoundError, OSError) as e:
        print(f"zonerec: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
