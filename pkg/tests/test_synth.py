import dataclasses

import numpy as np
import pytest

from zonerec import imageio, synth


def test_lexicon_deterministic_and_distinct(alphabet):
    a = synth.make_lexicon(alphabet, 30, seed=9)
    b = synth.make_lexicon(alphabet, 30, seed=9)
    assert a.words == b.words
    assert len(set(a.words)) == 30
    assert synth.make_lexicon(alphabet, 30, seed=10).words != a.words


def test_lexicon_has_shared_middles(alphabet):
    lex = synth.make_lexicon(alphabet, 100, seed=1)
    assert len(lex.middle_projection) < len(lex)
    assert all(2 <= len(e.middle) <= 7 for e in lex.entries)


def test_lexicon_impossible_request():
    # ten middle stencils give only 100 distinct two-glyph words without modifiers
    with pytest.raises(ValueError):
        synth.make_lexicon(synth.Alphabet(), 101, seed=0, length_weights={2: 1.0},
                           p_upper=0, p_lower=0, p_variant=0)


def test_alphabet_validation():
    with pytest.raises(ValueError):
        dataclasses.replace(synth.Alphabet(), headline=False).validate()
    with pytest.raises(ValueError):
        dataclasses.replace(synth.Alphabet(), glyph_gap=(1, 2)).validate()
    a = synth.Alphabet()
    with pytest.raises(ValueError):
        dataclasses.replace(a, upper={"U": a.upper["U"]}).validate()


def test_render_labels_match_ink(alphabet, lexicon):
    e = next(e for e in lexicon.entries if e.upper and e.lower)
    s = synth.render_word(alphabet, e, np.random.default_rng(0))
    assert s.gray.dtype == np.uint8 and s.gray.shape == s.mask.shape == s.labels.shape
    assert np.array_equal(s.labels > 0, s.mask)
    assert set(np.unique(s.labels[s.mask])) == {synth.UPPER, synth.MIDDLE, synth.LOWER}
    assert s.gray[s.mask].mean() < 80 < s.gray[~s.mask].mean()
    assert len(s.char_spans) == len(e.middle)


def test_corpus_prefix_property(alphabet, lexicon):
    short = synth.make_corpus(alphabet, lexicon, 4, seed=3)
    long = synth.make_corpus(alphabet, lexicon, 8, seed=3)
    for a, b in zip(short, long):
        assert a.word == b.word and np.array_equal(a.gray, b.gray)


def test_undistorted_corpus(alphabet, lexicon):
    for s in synth.make_corpus(alphabet, lexicon, 3, seed=4, distort=False):
        assert s.skew == 0 and s.slant == 0


def test_write_and_read_manifest(tmp_path, alphabet, lexicon):
    samples = synth.make_corpus(alphabet, lexicon, 3, seed=5)
    rows = synth.write_corpus(samples, tmp_path, "test")
    synth.write_manifest(tmp_path / "manifest.tsv", rows)
    back = synth.read_manifest(tmp_path / "manifest.tsv")
    assert [r.word for r in back] == [s.word for s in samples]
    assert all(r.split == "test" for r in back)
    assert np.array_equal(imageio.read_gray(back[0].path), samples[0].gray)
    assert (tmp_path / "test_00000.json").exists()


def test_manifest_errors(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("only-one-field\n")
    with pytest.raises(ValueError):
        synth.read_manifest(p)
    p.write_text("missing.png\tab\n")
    with pytest.raises(FileNotFoundError):
        synth.read_manifest(p)
    assert synth.read_manifest(p, check=False)[0].split is None
