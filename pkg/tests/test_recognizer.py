import numpy as np
import pytest

from zonerec import hmm, recognizer as R, synth


def test_training_set_contents(small_system):
    ts = small_system["training"]
    assert len(ts.hmm_corpus) == 300
    assert all(f.shape[1] == 168 for f, _ in ts.hmm_corpus)
    labels = {l for _, l in ts.upper} | {l for _, l in ts.lower}
    assert {"U", "V", "W", "X", "Y"} <= labels


def test_small_system_accuracy(small_system):
    rec = small_system["recognizer"]
    test = small_system["test"]
    top1 = np.mean([rec.recognize(s.gray, 5).best == s.word for s in test])
    assert top1 >= 0.85


def test_modifiers_separate_shared_middles(small_system):
    lex, rec = small_system["lexicon"], small_system["recognizer"]
    shared = {m for m in lex.middle_projection if sum(e.middle == m for e in lex.entries) > 1}
    assert shared
    samples = [s for s in small_system["test"] if s.entry.middle in shared]
    assert samples
    hits = [rec.recognize(s.gray, 5).best == s.word for s in samples]
    assert np.mean(hits) >= 0.8


def test_modifier_free_words_follow_hmm(small_system):
    rec = small_system["recognizer"]
    for s in small_system["test"]:
        r = rec.recognize(s.gray, 5)
        if r.upper or r.lower:
            continue
        top = r.hypotheses[0][0]
        plain = [e.word for e in rec.lexicon.entries if e.middle == top and not (e.upper or e.lower)]
        if plain:
            assert r.best == plain[0]
            assert r.ranked[0].distance == 0


def test_nbest_list_shape(small_system):
    rec = small_system["recognizer"]
    r = rec.recognize(small_system["test"][0].gray, 4)
    assert 1 <= len(r.ranked) <= 4
    assert len(set(r.words)) == len(r.words)
    keys = [x.distance for x in r.ranked]
    assert keys == sorted(keys)
    assert set(r.words) <= set(rec.lexicon.words)


def test_recognize_errors(small_system):
    rec = small_system["recognizer"]
    with pytest.raises(ValueError):
        rec.recognize(small_system["test"][0].gray, 0)
    with pytest.raises(ValueError):
        rec.recognize(np.full((30, 40), 255, np.uint8))


def test_models_round_trip(tmp_path, small_system):
    m = small_system["models"]
    m.save(tmp_path / "m")
    back = R.Models.load(tmp_path / "m")
    assert back.spec == m.spec and back.kind == m.kind
    assert back.upper is not None and back.lower is not None
    rec2 = R.Recognizer(back, small_system["lexicon"])
    img = small_system["test"][1].gray
    a, b = small_system["recognizer"].recognize(img, 5), rec2.recognize(img, 5)
    assert a.words == b.words
    assert [x.score for x in a.ranked] == pytest.approx([x.score for x in b.ranked])
    with pytest.raises(FileNotFoundError):
        R.Models.load(tmp_path / "nothing")


def test_entry_for(small_system):
    lex = small_system["lexicon"]
    assert R.entry_for(lex.words[0], lex) is lex.entries[0]
    e = R.entry_for("abU", lex)
    assert e.middle == "ab" and e.upper == "U"


def test_denoise_removes_specks(alphabet, lexicon):
    s = synth.render_word(alphabet, lexicon.entries[0], np.random.default_rng(1))
    m = s.mask.copy()
    m[0, 0] = m[-1, -1] = True
    out = R.denoise(m)
    assert not out[0, 0] and not out[-1, -1]
    assert (out & s.mask).sum() >= 0.95 * s.mask.sum()


def test_fit_svm_needs_two_classes():
    x = np.zeros(168)
    assert R.fit_svm([]) is None
    assert R.fit_svm([(x, "U"), (x, "U")]) is None


def test_hmm_only_training_uses_config(small_system):
    ts = small_system["training"]
    sub = R.TrainingSet(ts.kind, ts.spec, ts.hmm_corpus[:60])
    ms = R.train_hmm(sub, hmm.TrainConfig(states=3, mixtures=1, iterations=1))
    assert all(len(m.states) == 3 for m in ms.models.values())
    assert ms.meta["step"] == ts.spec.step
