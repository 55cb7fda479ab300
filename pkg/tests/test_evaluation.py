import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emofuse.core import CLASSES, LabelX, X
from emofuse.evaluation import (
    ConfusionMatrix,
    EmptyMatrix,
    LengthMismatch,
    accuracy,
    confusion_matrix,
    evaluate,
    macro_f1,
    micro_f1,
    per_class_f1,
    render_report,
    score,
)

from oracles import counting_metrics

REFS = list("AANN")
PREDS = list("ANNN")


def test_perfect_is_diagonal():
    labels = [c for c in CLASSES for _ in range(3)]
    cm = confusion_matrix(labels, labels)
    assert np.array_equal(cm.counts, np.eye(8, dtype=int) * 3)
    assert macro_f1(cm) == 1.0
    assert accuracy(cm) == 1.0


def test_fixture_counts():
    c = confusion_matrix(REFS, PREDS).counts
    assert c[0, 0] == 1 and c[0, 5] == 1 and c[5, 5] == 2
    assert c.sum() == 4


def test_fixture_scores():
    # hand computation: P_A = 1, R_A = 1/2; P_N = 2/3, R_N = 1
    cm = confusion_matrix(REFS, PREDS)
    f1 = per_class_f1(cm)
    assert f1[0] == pytest.approx(2 / 3, abs=1e-15)
    assert f1[5] == pytest.approx(0.8, abs=1e-15)
    assert np.count_nonzero(f1) == 2
    assert macro_f1(cm) == pytest.approx(0.183333333333333333, abs=1e-15)
    assert accuracy(cm) == 0.75


def test_empty():
    cm = confusion_matrix([], [])
    assert cm.total == 0 and not cm.counts.any()
    assert macro_f1(cm) == 0.0
    with pytest.raises(EmptyMatrix):
        accuracy(cm)


def test_uniformly_wrong():
    assert accuracy(confusion_matrix(list("AAA"), list("CCC"))) == 0.0


def test_diagonal_absent_classes_score_zero():
    f1 = per_class_f1(confusion_matrix(list("AH"), list("AH")))
    assert f1[0] == f1[4] == 1.0
    assert sum(f1) == 2.0


def test_errors():
    with pytest.raises(LengthMismatch):
        confusion_matrix(["A"], [])
    with pytest.raises(LabelX):
        confusion_matrix([X], ["A"])
    with pytest.raises(ValueError):
        ConfusionMatrix(np.zeros((3, 3)))


def test_labels_ints_and_codes_agree():
    a = confusion_matrix(REFS, PREDS).counts
    b = confusion_matrix([0, 0, 5, 5], [0, 5, 5, 5]).counts
    assert np.array_equal(a, b)


def test_against_counting_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        k = int(rng.integers(1, 9))
        refs = rng.integers(k, size=n).tolist()
        preds = rng.integers(k, size=n).tolist()
        f1s, mac, acc = counting_metrics(refs, preds)
        report = score(confusion_matrix(refs, preds))
        assert list(report.per_class_f1) == f1s
        assert report.macro_f1 == mac
        assert report.accuracy == acc


labels = st.lists(st.integers(0, 7), min_size=1, max_size=40)


@settings(max_examples=200)
@given(st.data())
def test_order_and_class_permutation(data):
    refs = data.draw(labels)
    preds = data.draw(st.lists(st.integers(0, 7), min_size=len(refs), max_size=len(refs)))
    order = data.draw(st.permutations(range(len(refs))))
    perm = data.draw(st.permutations(range(8)))
    base = score(confusion_matrix(refs, preds))

    shuffled = score(confusion_matrix([refs[i] for i in order], [preds[i] for i in order]))
    assert shuffled.macro_f1 == base.macro_f1

    relabeled = score(confusion_matrix([perm[r] for r in refs], [perm[p] for p in preds]))
    for c in range(8):
        assert relabeled.per_class_f1[perm[c]] == base.per_class_f1[c]
    assert relabeled.macro_f1 == pytest.approx(base.macro_f1, abs=1e-15)
    assert relabeled.accuracy == base.accuracy


@settings(max_examples=200)
@given(st.data())
def test_micro_f1_equals_accuracy(data):
    refs = data.draw(labels)
    preds = data.draw(st.lists(st.integers(0, 7), min_size=len(refs), max_size=len(refs)))
    cm = confusion_matrix(refs, preds)
    tp = np.trace(cm.counts)
    fp = cm.counts.sum() - tp  # every off-diagonal count is one fp and one fn
    assert micro_f1(cm) == tp / (tp + fp) == accuracy(cm)


class TestRender:
    def test_csv_fixture(self):
        report, cm = evaluate(REFS, PREDS)
        text = render_report(report, cm, "csv")
        assert "F1-Macro,0.183333" in text
        assert "Accuracy,0.750000" in text
        assert "F1-A,0.666667" in text
        assert "A,0.5000,0.0000,0.0000,0.0000,0.0000,0.5000,0.0000,0.0000" in text

    def test_text_perfect(self):
        labels = list("ACDFHNSU")
        report, cm = evaluate(labels, labels)
        text = render_report(report, cm)
        lines = text.splitlines()
        assert lines[1].startswith("Anger (A)") and "1.0000" in lines[1]
        assert lines[8].startswith("Surprise (U)")
        assert any(line.startswith("Accuracy") and line.endswith("1.0000") for line in lines)
        assert any(line.startswith("F1-Macro") and line.endswith("1.0000") for line in lines)

    def test_deterministic(self):
        report, cm = evaluate(REFS, PREDS)
        assert render_report(report, cm, "text") == render_report(*evaluate(REFS, PREDS), "text")

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            render_report(*evaluate(REFS, PREDS), "html")
