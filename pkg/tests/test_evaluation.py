import pytest

from zonerec import evaluation
from zonerec.evaluation import EvalItem


@pytest.fixture(scope="module")
def items(small_system):
    return [EvalItem(s.gray, s.word, s.labels) for s in small_system["test"][:20]]


def test_topk_hits():
    assert evaluation.topk_hits([0, 1, None, 4, 0], 5) == [2, 3, 3, 3, 4]
    assert evaluation.topk_hits([], 3) == [0, 0, 0]


def test_report_order_independent(items, small_system):
    rec = small_system["recognizer"]
    a = evaluation.evaluate(items, rec)
    b = evaluation.evaluate(items[::-1], rec)
    assert a.to_text() == b.to_text()
    assert a.n == 20 and a.topk == sorted(a.topk)
    assert sum(a.zone_types) == 20
    assert sum(n for n, _ in a.by_length.values()) == 20
    assert 0 <= a.char_accuracy <= 1


def test_empty_input(small_system):
    with pytest.raises(ValueError):
        evaluation.evaluate([], small_system["recognizer"])


def test_noise_levels(items, small_system):
    rec = small_system["recognizer"]
    rows = evaluation.noise_experiment(items[:8], rec, levels=[0.1], seed=3)
    assert [r.level for r in rows] == [0.0, 0.1]
    assert rows[0].delta_top1 == 0
    assert rows[0].report.to_text() == evaluation.evaluate(items[:8], rec).to_text()
    table = evaluation.noise_table(rows)
    assert table.splitlines()[0].startswith("level") and len(table.splitlines()) == 3


def test_noise_is_seeded(items):
    a = evaluation.noisy(items[0].image, 0.2, 1, 0)
    b = evaluation.noisy(items[0].image, 0.2, 1, 0)
    c = evaluation.noisy(items[0].image, 0.2, 1, 1)
    assert (a == b).all() and not (a == c).all()
    assert evaluation.noisy(items[0].image, 0.0, 1, 0) is items[0].image
