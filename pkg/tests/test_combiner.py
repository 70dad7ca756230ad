import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from zonerec import combiner
from zonerec.combiner import AssociatedWord, CharBoundary, Lexicon, ZoneLabels, ZoneTable
from zonerec.features import FrameSpec

from oracles import assignments, levenshtein_table

TOY = ZoneTable.from_symbols("abcdefghij", "UVW", "XY")


# -- class arithmetic --------------------------------------------------------------

def test_reduction_example():
    combined, zoned, red, undefined = combiner.decomposition_stats(4, 280, 3)
    assert (combined, zoned) == (1960, 287) and not undefined
    assert round(100 * red, 2) == 85.36


def test_reduction_undefined():
    combined, zoned, red, undefined = combiner.decomposition_stats(0, 5, 0)
    assert combined == 0 and zoned == 5 and red == 0 and undefined


def test_reduction_formula():
    rng = np.random.default_rng(0)
    for x, y, z in rng.integers(1, 50, (50, 3)):
        c, n, r, _ = combiner.decomposition_stats(int(x), int(y), int(z))
        assert c == x * y + y * z and n == x + y + z
        assert r == pytest.approx(1 - (x + y + z) / (x * y + y * z))
    with pytest.raises(ValueError):
        combiner.decomposition_stats(-1, 2, 3)


# -- zone table and lexicon ----------------------------------------------------------

def test_toy_decompose_compose():
    e = TOY.decompose("aUbcVXd")
    assert (e.upper, e.middle, e.lower) == ("UV", "abcd", "X")
    assert e.attach_upper == (0, 2) and e.attach_lower == (2,)
    assert TOY.compose("abcd", {0: "U", 2: "V"}, {2: "X"}) == "aUbcVXd"


@pytest.mark.parametrize("name", ["toy", "bangla", "devanagari"])
def test_builtin_tables_round_trip(name):
    t = ZoneTable.builtin(name)
    for c in t.clusters.values():
        e = t.decompose(c.text)
        up = dict(zip(e.attach_upper, e.upper))
        lo = dict(zip(e.attach_lower, e.lower))
        assert t.compose(e.middle, up, lo) == c.text
    assert ZoneTable.parse(t.dumps()).dumps() == t.dumps()


def test_table_errors():
    with pytest.raises(ValueError):
        ZoneTable.parse("a\tb\n")
    with pytest.raises(ValueError):
        TOY.decompose("aZ")


def test_lexicon_round_trip(tmp_path):
    lex = Lexicon.from_words(["aUb", "ab", "cXdV", "aVb"], TOY)
    assert lex.middle_projection == ["ab", "cd"]
    assert len(lex.middle_projection) <= len(lex)
    p = tmp_path / "lex.tsv"
    lex.save(p)
    back = Lexicon.load(p, TOY)
    assert back.words == lex.words and back.entries == lex.entries


def test_lexicon_rejects_inconsistent_entry():
    bad = combiner.LexEntry("aUb", "U", "ab", "", (1,), ())
    with pytest.raises(ValueError):
        Lexicon([bad], TOY)
    with pytest.raises(ValueError):
        Lexicon([], TOY)


# -- boundaries --------------------------------------------------------------------

def test_frames_to_columns_example():
    b = combiner.frames_to_columns([(0, 5), (5, 10)], FrameSpec(), 1.0, 40)
    assert b.spans == [(0, 18), (18, 40)]
    b2 = combiner.frames_to_columns([(0, 5), (5, 10)], FrameSpec(), 2.0, 20, x_offset=3)
    assert b2.cuts == [3 + 9]


def test_frames_to_columns_single_and_monotone():
    assert combiner.frames_to_columns([(0, 10)], FrameSpec(), 1.3, 50).spans == [(0, 50)]
    rng = np.random.default_rng(1)
    for _ in range(100):
        T = int(rng.integers(2, 40))
        k = int(rng.integers(1, min(T, 6) + 1))
        cuts = sorted(rng.choice(np.arange(1, T), size=k - 1, replace=False)) if k > 1 else []
        edges = [0] + list(cuts) + [T]
        al = list(zip(edges[:-1], edges[1:]))
        width = int(rng.integers(10, 120))
        b = combiner.frames_to_columns(al, FrameSpec(), float(rng.uniform(0.5, 2)), width)
        starts = [s for s, _ in b.spans]
        assert starts == sorted(starts)
        assert all(0 <= s <= e <= width for s, e in b.spans)
        assert all(x[1] == y[0] for x, y in zip(b.spans, b.spans[1:]))


def test_snap_to_nearby_depth_point():
    b = CharBoundary([(0, 20), (20, 40), (40, 60)])
    s = combiner.snap_boundaries(b, [22, 57])
    assert s.cuts == [22, 40] and s.snapped[:2] == [True, False]


def test_snap_without_reservoirs():
    b = CharBoundary([(0, 20), (20, 40)])
    assert combiner.snap_boundaries(b, []).spans == b.spans


def test_snap_rejected_when_crossing():
    b = CharBoundary([(0, 20), (20, 24), (24, 60)])
    s = combiner.snap_boundaries(b, [25])
    # moving the first cut to 25 would pass the second one
    assert s.cuts[0] == 20 and s.cuts == sorted(s.cuts)


@given(st.lists(st.integers(1, 15), min_size=2, max_size=7),
       st.lists(st.integers(0, 100), max_size=8))
def test_snap_keeps_order(widths, depth):
    edges = np.concatenate([[0], np.cumsum(widths)])
    b = CharBoundary([(int(a), int(c)) for a, c in zip(edges[:-1], edges[1:])])
    s = combiner.snap_boundaries(b, depth)
    assert len(s.spans) == len(b.spans)
    assert all(x[0] < x[1] for x in s.spans)
    assert all(x[1] == y[0] for x, y in zip(s.spans, s.spans[1:]))


# -- association ----------------------------------------------------------------------

def test_modifier_between_two_chars():
    z = ZoneLabels("abc", [(0, 10), (10, 20), (20, 30)], upper=[("U", (7, 12))])
    words = {w.text for w in combiner.associate(z, TOY)}
    assert len(words) >= 2
    assert {"aUbc", "abUc"} <= words


def test_no_modifiers():
    z = ZoneLabels("abc", [(0, 10), (10, 20), (20, 30)])
    out = combiner.associate(z, TOY)
    assert [w.text for w in out] == ["abc"]
    with pytest.raises(ValueError):
        combiner.associate(ZoneLabels("", []))


def random_zone_labels(rng, max_mid=5, max_mods=3):
    n = int(rng.integers(1, max_mid + 1))
    width = 10 * n
    spans = [(10 * i, 10 * i + 10) for i in range(n)]

    def mods(symbols):
        out = []
        for _ in range(int(rng.integers(0, max_mods + 1))):
            c = int(rng.integers(0, width))
            out.append((str(rng.choice(list(symbols))), (c, c + 2)))
        return sorted(out, key=lambda m: m[1])

    return ZoneLabels("".join(rng.choice(list("abcdefghij"), n)), spans, mods("UVW"), mods("XY"))


def test_association_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        z = random_zone_labels(rng)
        homes_u = [combiner.home_index(z.spans, (s + e) / 2) for _, (s, e) in z.upper]
        homes_l = [combiner.home_index(z.spans, (s + e) / 2) for _, (s, e) in z.lower]
        want = set(itertools.product(assignments(homes_u, len(z.middle)),
                                     assignments(homes_l, len(z.middle))))
        got = combiner.associate(z, TOY, cap=10 ** 6)
        assert {(w.upper_targets, w.lower_targets) for w in got} == want
        assert len(got) == len(want)
        for w in got:
            for targets in (w.upper_targets, w.lower_targets):
                used = [t for t in targets if t is not None]
                assert len(used) == len(set(used))


def test_association_cap_prefers_home_bindings():
    z = ZoneLabels("abcde", [(0, 10), (10, 20), (20, 30), (30, 40), (40, 50)],
                   upper=[("U", (4, 6)), ("V", (24, 26))], lower=[("X", (14, 16))])
    out = combiner.associate(z, TOY, cap=3)
    assert len(out) == 3
    assert out[0].displaced == 0 and out[0].text == "aUbXcVde"
    assert all(a.displaced <= b.displaced for a, b in zip(out, out[1:]))


# -- edit distance and ranking -----------------------------------------------------

def test_levenshtein_examples():
    assert combiner.levenshtein("abc", "abc") == 0
    assert combiner.levenshtein("", "abcd") == 4
    assert combiner.levenshtein("kitten", "sitting") == 3
    assert combiner.levenshtein("কু", "কূ") == 1  # code points, not bytes


def test_levenshtein_dp_oracle():
    rng = np.random.default_rng(3)
    alpha = list("abcdU")
    for _ in range(1000):
        a = "".join(rng.choice(alpha, int(rng.integers(0, 9))))
        b = "".join(rng.choice(alpha, int(rng.integers(0, 9))))
        assert combiner.levenshtein(a, b) == levenshtein_table(a, b)


words = st.text(alphabet="abcXU", max_size=8)


@given(words, words, words)
def test_levenshtein_metric(a, b, c):
    d = combiner.levenshtein
    assert (d(a, b) == 0) == (a == b)
    assert d(a, b) == d(b, a)
    assert d(a, c) <= d(a, b) + d(b, c)


def test_rank_exact_and_near():
    lex = Lexicon.from_words(["abc", "aUbc", "cde"], TOY)
    r = combiner.rank_against_lexicon([AssociatedWord("aUbc", (0,), ())], lex, [0.0])
    assert r[0].word == "aUbc" and r[0].distance == 0
    r = combiner.rank_against_lexicon([AssociatedWord("cdf", (), ())], lex, [0.0])
    assert r[0].word == "cde" and r[0].distance == 1
    with pytest.raises(ValueError):
        combiner.rank_against_lexicon([], lex, [])


def test_rank_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(50):
        mids = ["".join(rng.choice(list("abcd"), int(rng.integers(2, 5)))) for _ in range(8)]
        lex = Lexicon.from_words(sorted(set(mids)), TOY)
        cands = [AssociatedWord("".join(rng.choice(list("abcd"), int(rng.integers(1, 6)))), (), (), int(k))
                 for k in rng.integers(0, 3, 5)]
        hyp = rng.normal(-50, 5, 3)
        best = min(((levenshtein_table(c.text, w), -hyp[c.source], w) for c in cands for w in lex.words))
        assert combiner.rank_against_lexicon(cands, lex, hyp, 1)[0].word == best[2]
