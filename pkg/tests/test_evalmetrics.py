import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dsdkit import evalmetrics as em
from dsdkit.errors import DimensionError, ValidationError
from dsdkit.oracles import brute_classification


def test_perfect_predictor():
    labels = [0, 1, 2, 1, 0]
    for k in range(3):
        c = em.outcome_counts(labels, labels, k)
        assert c.fp == c.fn == 0
    r = em.classification_report(labels, labels)
    assert (r.acc, r.pre, r.rec, r.f1) == (100.0, 100.0, 100.0, 100.0)


def test_inverted_binary_predictor():
    labels = np.array([0, 1, 1, 0])
    c = em.outcome_counts(1 - labels, labels, 1)
    assert c.tp == c.tn == 0 and c.fp == 2 and c.fn == 2


def test_five_sample_hand_counts():
    preds, labels = [0, 1, 1, 2, 0], [0, 1, 2, 2, 1]
    assert em.outcome_counts(preds, labels, 1) == em.OutcomeCounts(tp=1, fp=1, tn=2, fn=1)
    assert em.outcome_counts(preds, labels, 2) == em.OutcomeCounts(tp=1, fp=0, tn=3, fn=1)


def test_hand_percentages():
    c = em.OutcomeCounts(tp=3, fp=1, tn=6, fn=2)
    pre, rec = em.precision(c), em.recall(c)
    assert pre == 75.0 and rec == 60.0
    assert em.f1_score(pre, rec) == pytest.approx(66.6667, abs=1e-4)


def test_absent_metrics_are_none_and_skipped_in_macro():
    # class 2 never appears or is predicted
    r = em.classification_report([0, 1, 1], [0, 1, 0], num_classes=3)
    assert r.per_class[2].pre is None and r.per_class[2].rec is None and r.per_class[2].f1 is None
    assert r.pre == pytest.approx((50.0 + 100.0) / 2)
    assert r.rec == pytest.approx((100.0 + 50.0) / 2)
    assert em.f1_score(0.0, 0.0) is None and em.f1_score(None, 50.0) is None
    assert r.to_dict()["macro"]["acc"] == pytest.approx(200 / 3)


def test_relative_error_reduction():
    assert em.relative_error_reduction(5.0, 5.0) == 0.0
    assert em.relative_error_reduction(20, 15) == 25.0
    assert em.relative_error_reduction(1.43, 0.98) == pytest.approx(31.4685, abs=1e-4)
    assert em.relative_error_reduction(0, 1) is None


def test_input_errors():
    with pytest.raises(DimensionError):
        em.classification_report([0, 1], [0])
    with pytest.raises(ValidationError):
        em.classification_report([0, 3], [0, 1], num_classes=3)


@given(st.integers(2, 6).flatmap(lambda m: st.tuples(
    st.just(m),
    st.lists(st.tuples(st.integers(0, m - 1), st.integers(0, m - 1)), min_size=1, max_size=50))))
def test_closed_forms_equal_brute_force(case):
    m, pairs = case
    preds, labels = [p for p, _ in pairs], [y for _, y in pairs]
    got = em.classification_report(preds, labels, m)
    ref = brute_classification(preds, labels, m)
    assert got.acc == ref["acc"]
    for k, c in enumerate(got.per_class):
        r = ref["per_class"][k]
        counts = em.outcome_counts(preds, labels, k)
        assert (counts.tp, counts.fp, counts.tn, counts.fn) == (r["tp"], r["fp"], r["tn"], r["fn"])
        assert (c.pre, c.rec, c.f1) == (r["pre"], r["rec"], r["f1"])
        assert c.support == r["tp"] + r["fn"]
