import math

import numpy as np
import pytest

from zonerec import hmm
from zonerec.hmm import CharacterHmm, GmmState, ModelSet, TrainConfig
from zonerec.kernels import NEG

from oracles import chain_oracle


def gmm(rng, M, D):
    w = rng.random(M) + 0.1
    return GmmState(w / w.sum(), rng.normal(size=(M, D)), rng.uniform(0.5, 2.0, size=(M, D)))


def random_models(rng, labels, states, D=2, M=2):
    models = {}
    for lab, n in zip(labels, states):
        p = rng.uniform(0.2, 0.8, size=n)
        models[lab] = CharacterHmm(lab, [gmm(rng, M, D) for _ in range(n)], p, 1 - p)
    return ModelSet(models, "toy", D)


def gaussian_models(means, states=1, var=1.0, stay=0.7):
    models = {}
    for lab, mu in means.items():
        st = [GmmState(np.ones(1), np.array([[mu]], float), np.array([[var]])) for _ in range(states)]
        models[lab] = CharacterHmm(lab, st, np.full(states, stay), np.full(states, 1 - stay))
    return ModelSet(models, "toy", 1)


def sample_word(rng, means, word, lo=4, hi=9):
    xs = [means[c] + rng.normal(size=int(rng.integers(lo, hi))) for c in word]
    return np.concatenate(xs)[:, None]


# -- densities -----------------------------------------------------------------

def test_single_gaussian_at_mean():
    d = 5
    st = GmmState(np.ones(1), np.zeros((1, d)), np.ones((1, d)))
    assert hmm.gmm_logpdf(st, np.zeros(d)) == pytest.approx(-d / 2 * math.log(2 * math.pi))


def test_symmetric_mixture():
    st = GmmState(np.array([.5, .5]), np.array([[-1.0], [1.0]]), np.ones((2, 1)))
    one = math.exp(-0.5) / math.sqrt(2 * math.pi)
    assert hmm.gmm_logpdf(st, np.zeros(1)) == pytest.approx(math.log(one))


def test_mixture_direct_sum():
    rng = np.random.default_rng(0)
    st = gmm(rng, 3, 4)
    x = rng.normal(size=4)
    dens = 0.0
    for k in range(3):
        v = st.variances[k]
        dens += st.weights[k] * np.prod(np.exp(-0.5 * (x - st.means[k]) ** 2 / v) / np.sqrt(2 * np.pi * v))
    assert hmm.gmm_logpdf(st, x) == pytest.approx(math.log(dens), abs=1e-10)


def test_dim_mismatch():
    st = GmmState(np.ones(1), np.zeros((1, 3)), np.ones((1, 3)))
    with pytest.raises(ValueError):
        hmm.gmm_logpdf(st, np.zeros(2))


# -- chains --------------------------------------------------------------------

def test_single_state_collapse():
    ms = gaussian_models({"a": 0.0}, stay=0.6)
    X = np.random.default_rng(1).normal(size=(7, 1))
    st = ms.models["a"].states[0]
    want = sum(hmm.gmm_logpdf(st, x) for x in X) + 6 * math.log(0.6) + math.log(0.4)
    assert hmm.sequence_loglik(ms, "a", X) == pytest.approx(want, abs=1e-9)


def test_chain_matches_enumeration(backend):
    rng = np.random.default_rng(2)
    for _ in range(60):
        ms = random_models(rng, "ab", [int(rng.integers(1, 3)), 1])
        word = "a" if rng.random() < 0.5 else "ab"
        S = ms.min_frames(word)
        if S > 3:
            word = "a"
            S = ms.min_frames(word)
        T = int(rng.integers(1, 7))
        X = rng.normal(size=(T, 2))
        table = hmm.EmissionTable(ms)
        ch = hmm.build_chain(ms, table, word)
        fwd, vit = chain_oracle(table(X)[:, ch.state_ids], ch.lself, ch.lnext)
        got_f = hmm.sequence_loglik(ms, word, X)
        got_v, _ = hmm.viterbi(ms, word, X)
        if fwd is None:
            assert got_f == NEG and got_v == NEG
        else:
            assert got_f == pytest.approx(fwd, abs=1e-9)
            assert got_v == pytest.approx(vit, abs=1e-9)
            assert got_f >= got_v - 1e-12


def test_outlier_frame_lowers_likelihood():
    ms = gaussian_models({"a": 0.0})
    X = np.zeros((5, 1))
    worse = np.vstack([X, [[50.0]]])
    assert hmm.sequence_loglik(ms, "a", worse) < hmm.sequence_loglik(ms, "a", X)


def test_short_sequence_sentinel():
    ms = gaussian_models({"a": 0.0}, states=4)
    assert hmm.sequence_loglik(ms, "a", np.zeros((3, 1))) == NEG


def test_transition_matrix_shape():
    m = gaussian_models({"a": 0.0}, states=3).models["a"]
    A = m.trans
    assert A.shape == (5, 5)
    np.testing.assert_allclose(A[:-1].sum(1), 1.0)
    assert np.count_nonzero(np.triu(A, 2)) == 0  # no skips by default


# -- training ------------------------------------------------------------------

TOY = {"a": -3.0, "b": 0.0, "c": 3.0}


def toy_corpus(seed, n=60):
    rng = np.random.default_rng(seed)
    words = ["ab", "bc", "ca", "abc", "cab", "bca", "acb"]
    return [(sample_word(rng, TOY, w), w) for w in (words[i % len(words)] for i in range(n))]


def test_em_monotone():
    log = hmm.TrainLog()
    hmm.train_embedded(toy_corpus(0), TrainConfig(states=2, mixtures=1, iterations=12, tol=-np.inf),
                       log=log)
    ll = [h[2] for h in log.history]
    assert len(ll) >= 13
    assert all(b >= a - 1e-8 for a, b in zip(ll, ll[1:]))


def test_recovers_means():
    ms = hmm.train_embedded(toy_corpus(1, 120), TrainConfig(states=1, mixtures=1, iterations=8))
    for c, mu in TOY.items():
        assert abs(ms.models[c].states[0].means[0, 0] - mu) < 0.2


def test_mixture_target_and_stochastic():
    for iters in (1, 2, 3):
        ms = hmm.train_embedded(toy_corpus(2), TrainConfig(states=3, mixtures=4, iterations=iters))
        floor = 1e-2 * np.vstack([X for X, _ in toy_corpus(2)]).var(0)
        for m in ms.models.values():
            np.testing.assert_allclose(m.a_self + m.a_next, 1.0, atol=1e-9)
            np.testing.assert_allclose(m.trans[:-1].sum(1), 1.0, atol=1e-9)
            for st in m.states:
                assert st.n_mix == 4
                assert st.weights.sum() == pytest.approx(1.0, abs=1e-9)
                assert (st.variances >= floor - 1e-15).all()


def test_split_schedule():
    assert hmm._stage_targets(32) == [1, 2, 4, 8, 16, 32]
    assert hmm._stage_targets(6) == [1, 2, 4, 6]
    st = GmmState(np.array([0.7, 0.3]), np.zeros((2, 1)), np.ones((2, 1)))
    sp = hmm.split_mixtures(st, 3, 0.2)
    assert sp.n_mix == 3 and sp.weights.sum() == pytest.approx(1.0)


def test_rare_symbol_rejected():
    corpus = toy_corpus(3, 20) + [(np.zeros((5, 1)), "z")]
    with pytest.raises(ValueError, match="z"):
        hmm.train_embedded(corpus, TrainConfig(states=1, mixtures=1))


def test_skip_topology():
    ms = hmm.train_embedded(toy_corpus(4), TrainConfig(states=3, mixtures=1, iterations=2, skip=True))
    m = ms.models["a"]
    np.testing.assert_allclose(m.a_self + m.a_next + m.a_skip, 1.0, atol=1e-9)
    X = sample_word(np.random.default_rng(5), TOY, "ab")
    assert hmm.sequence_loglik(ms, "ab", X) >= hmm.viterbi(ms, "ab", X)[0]


# -- decoding ------------------------------------------------------------------

def test_one_word_lexicon():
    ms = gaussian_models(TOY)
    X = sample_word(np.random.default_rng(6), TOY, "ab")
    assert hmm.decode_lexicon(X, ms, ["cc"])[0] == "cc"
    with pytest.raises(ValueError):
        hmm.decode_lexicon(X, ms, [])


def test_source_word_wins():
    rng = np.random.default_rng(7)
    ms = gaussian_models(TOY, states=2)
    dec = hmm.Decoder(ms, ["abc", "cba"])
    wins = 0
    for i in range(200):
        w = "abc" if i % 2 else "cba"
        wins += dec.nbest(sample_word(rng, TOY, w), 1)[0][0] == w
    assert wins >= 190


def test_nbest_is_brute_force_ranking():
    rng = np.random.default_rng(8)
    ms = gaussian_models(TOY, states=2)
    lex = ["ab", "ba", "abc", "cab", "bb", "ca"]
    X = sample_word(rng, TOY, "cab")
    scores = {w: hmm.viterbi(ms, w, X)[0] for w in lex}
    want = sorted(lex, key=lambda w: (-scores[w], w))
    got = hmm.nbest(X, ms, lex, 10)
    assert [w for w, _ in got] == want
    assert all(a[1] >= b[1] for a, b in zip(got, got[1:]))
    assert hmm.nbest(X, ms, lex, 1)[0] == hmm.decode_lexicon(X, ms, lex)
    with pytest.raises(ValueError):
        hmm.nbest(X, ms, lex, 0)


def test_ties_go_lexicographic():
    ms = gaussian_models({"a": 0.0, "b": 0.0})
    X = np.zeros((4, 1))
    assert [w for w, _ in hmm.nbest(X, ms, ["b", "a"], 2)] == ["a", "b"]


def test_forced_alignment_single_symbol():
    ms = gaussian_models(TOY)
    assert hmm.forced_align(np.zeros((9, 1)), "a", ms).spans == [(0, 9)]


def test_change_point():
    ms = gaussian_models({"a": 0.0, "b": 6.0})
    X = np.concatenate([np.zeros(10), np.full(10, 6.0)])[:, None]
    X += np.random.default_rng(9).normal(0, 0.3, X.shape)
    assert 9 <= hmm.forced_align(X, "ab", ms).cuts[0] <= 11


def test_alignment_partition():
    rng = np.random.default_rng(10)
    ms = gaussian_models(TOY, states=2)
    for _ in range(100):
        w = "".join(rng.choice(list("abc"), size=int(rng.integers(1, 5))))
        T = int(rng.integers(2 * len(w), 30))
        al = hmm.forced_align(rng.normal(size=(T, 1)), w, ms)
        assert al.spans[0][0] == 0 and al.spans[-1][1] == T
        assert all(a[1] == b[0] for a, b in zip(al.spans, al.spans[1:]))
        assert all(s < e for s, e in al.spans)


def test_infeasible_alignment():
    ms = gaussian_models(TOY, states=3)
    with pytest.raises(ValueError):
        hmm.forced_align(np.zeros((4, 1)), "ab", ms)


def test_rescoring():
    scores = {"x": -10.0, "y": -12.0}
    K = 2
    uni = {w: hmm.rescore_log_posterior(s, 1 / K) for w, s in scores.items()}
    assert max(uni, key=uni.get) == "x"
    assert uni["x"] - scores["x"] == pytest.approx(-math.log(K))
    assert hmm.rescore_log_posterior(-3.0, 0.2) - hmm.rescore_log_posterior(-3.0, 0.1) == pytest.approx(math.log(2))
    assert hmm.rescore_log_posterior(-3.0) == -3.0


def test_rescoring_matches_full_bayes():
    rng = np.random.default_rng(11)
    s = rng.normal(-20, 3, 6)
    prior = rng.random(6)
    prior /= prior.sum()
    joint = s + np.log(prior)
    post = joint - np.logaddexp.reduce(joint)
    ours = [hmm.rescore_log_posterior(a, b) for a, b in zip(s, prior)]
    assert list(np.argsort(ours)) == list(np.argsort(post))


# -- model file ----------------------------------------------------------------

def test_model_file_round_trip(tmp_path):
    ms = hmm.train_embedded(toy_corpus(12), TrainConfig(states=2, mixtures=2, iterations=2))
    p = tmp_path / "m.zhmm"
    hmm.save_models(p, ms)
    back = hmm.load_models(p)
    assert back.labels() == ms.labels() and back.kind == ms.kind
    for c in ms.labels():
        a, b = ms.models[c], back.models[c]
        assert a.a_self.tobytes() == b.a_self.tobytes()
        for s, t in zip(a.states, b.states):
            assert s.means.tobytes() == t.means.tobytes()
            assert s.variances.tobytes() == t.variances.tobytes()
            assert s.weights.tobytes() == t.weights.tobytes()
    X = sample_word(np.random.default_rng(13), TOY, "cab")
    lex = ["ab", "cab", "bca"]
    assert hmm.nbest(X, ms, lex, 3) == hmm.nbest(X, back, lex, 3)
    hmm.save_models(tmp_path / "m2.zhmm", back)
    assert (tmp_path / "m2.zhmm").read_bytes() == p.read_bytes()


def test_model_file_rejects_garbage(tmp_path):
    p = tmp_path / "bad.zhmm"
    p.write_bytes(b"nope")
    with pytest.raises(ValueError):
        hmm.load_models(p)
