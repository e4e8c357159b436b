import numpy as np
import pytest
from hypothesis import given, strategies as st

from memotion.dataset import ALL_TASKS, TASK_GROUPS, Task
from memotion.metrics import REFERENCE_SCORES, aggregate, comparison_rows, macro_f1, render_comparison


def brute_force_macro_f1(y_true, y_pred, k):
    """Explicit TP/FP/FN counting, one class at a time."""
    total = 0.0
    for c in range(k):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        total += 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return total / k


def test_perfect_prediction():
    assert macro_f1([0, 1, 2, 1], [0, 1, 2, 1], 3) == 1.0


def test_hand_computed_case():
    # class 0: P=1 R=1/2 -> 2/3; class 1: P=2/3 R=1 -> 4/5; class 2: 1
    assert macro_f1([0, 0, 1, 1, 2], [0, 1, 1, 1, 2], 3) == pytest.approx((2 / 3 + 4 / 5 + 1) / 3, abs=1e-12)
    assert macro_f1([0, 0, 1, 1, 2], [0, 1, 1, 1, 2], 3) == pytest.approx(0.82222, abs=1e-5)


def test_total_miss():
    assert macro_f1([0, 0, 0], [1, 1, 1], 2) == 0.0


def test_absent_class_contributes_zero():
    assert macro_f1([0, 1], [0, 1], 3) == pytest.approx(2 / 3)


def test_errors():
    with pytest.raises(ValueError):
        macro_f1([0, 1], [0], 2)
    with pytest.raises(ValueError):
        macro_f1([], [], 2)
    with pytest.raises(ValueError):
        macro_f1([0, 2], [0, 1], 2)


def test_random_instances_match_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        k = int(rng.integers(1, 5))
        t, p = rng.integers(0, k, n).tolist(), rng.integers(0, k, n).tolist()
        assert abs(macro_f1(t, p, k) - brute_force_macro_f1(t, p, k)) <= 1e-9


pairs = st.integers(1, 4).flatmap(
    lambda k: st.tuples(
        st.just(k),
        st.lists(st.tuples(st.integers(0, k - 1), st.integers(0, k - 1)), min_size=1, max_size=50),
    )
)


@given(pairs, st.randoms(use_true_random=False))
def test_permutation_invariance(data, rnd):
    k, xs = data
    shuffled = list(xs)
    rnd.shuffle(shuffled)
    a = macro_f1(*zip(*xs), k)
    b = macro_f1(*zip(*shuffled), k)
    assert a == pytest.approx(b, abs=1e-12)


@given(pairs, st.randoms(use_true_random=False))
def test_relabeling_invariance(data, rnd):
    k, xs = data
    perm = list(range(k))
    rnd.shuffle(perm)
    t, p = zip(*xs)
    assert macro_f1(t, p, k) == pytest.approx(macro_f1([perm[i] for i in t], [perm[i] for i in p], k), abs=1e-12)


def _scores(**overrides):
    s = {t: 0.5 for t in ALL_TASKS}
    s.update({Task.parse(k): v for k, v in overrides.items()})
    return s


def test_aggregate_b_mean():
    s = _scores(B_funny=0.4, B_sarcastic=0.5, B_offensive=0.6, B_motivational=0.5)
    assert aggregate(s).task_b_score == pytest.approx(0.5, abs=1e-12)


def test_aggregate_equal_c_scores():
    s = _scores(C_funny=0.3097, C_sarcastic=0.3097, C_offensive=0.3097)
    assert aggregate(s).task_c_score == pytest.approx(0.3097, abs=1e-12)


def test_aggregate_all_ones():
    r = aggregate({t: 1.0 for t in ALL_TASKS})
    assert (r.task_a_score, r.task_b_score, r.task_c_score) == (1.0, 1.0, 1.0)


def test_aggregate_missing_subtask():
    s = _scores()
    del s[Task.C_SARCASTIC]
    with pytest.raises(KeyError, match="C_sarcastic"):
        aggregate(s)


@given(st.lists(st.floats(0, 1), min_size=8, max_size=8))
def test_aggregate_means_exact(values):
    r = aggregate(dict(zip(ALL_TASKS, values)))
    b = [r.per_subtask[t] for t in TASK_GROUPS["B"]]
    c = [r.per_subtask[t] for t in TASK_GROUPS["C"]]
    assert abs(r.task_b_score - sum(b) / 4) <= 1e-12
    assert abs(r.task_c_score - sum(c) / 3) <= 1e-12


def test_reference_constants():
    assert REFERENCE_SCORES["Baseline"]["A"] == 0.2176
    assert REFERENCE_SCORES["DenseNet"]["B"] == 0.5120
    assert REFERENCE_SCORES["Highest score"] == {"A": 0.3547, "B": 0.5183, "C": 0.3225}
    assert REFERENCE_SCORES["BERT-DenseNet (submitted)"]["A"] == 0.3452


def test_empty_comparison_has_only_reference_rows():
    rows = comparison_rows({})
    assert [r["model"] for r in rows] == ["Highest score", "Baseline"]
    text = render_comparison({})
    assert "0.2176" in text and "0.3547" in text
    assert "DenseNet" not in text


def test_comparison_orders_rows_and_shows_published_values():
    report = aggregate({t: 0.25 for t in ALL_TASKS})
    rows = comparison_rows({"ResNet": report, "DenseNet": report})
    assert [r["model"] for r in rows] == ["Highest score", "DenseNet", "ResNet", "Baseline"]
    assert rows[1]["published"]["B"] == 0.5120
    assert "0.2500 (0.5120)" in render_comparison({"DenseNet": report})
