import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from codeconcepts.errors import DatasetMismatch, LengthMismatch
from codeconcepts.metrics import (
    Counts, Delta, EvalReport, concept_scores, confusion, delta_report, f1, format_deltas, prf,
)


def test_f1_cases():
    # tp=1, fp=1, fn=1
    r = f1([1, 1, 0], [1, 0, 1])
    assert (r.counts.tp, r.counts.fp, r.counts.fn) == (1, 1, 1) and r.task_f1 == 0.5
    assert f1([1, 0, 1], [1, 0, 1]).task_f1 == 1.0
    assert f1([0, 0, 0], [1, 0, 1]).task_f1 == 0.0
    assert prf(Counts(0, 0, 0, 5)) == (0.0, 0.0, 0.0)


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        f1([1, 0], [1])
    with pytest.raises(ValueError):
        f1([2, 0], [1, 0])


def _brute(pred, lab):
    tp = fp = fn = 0
    for prow, lrow in zip(pred, lab):
        for p, y in zip(prow, lrow):
            tp += p and y
            fp += p and not y
            fn += (not p) and y
    return 2 * tp / (2 * tp + fp + fn) if tp else 0.0


@settings(max_examples=300)
@given(st.integers(1, 6), st.integers(1, 5), st.data())
def test_micro_f1_matches_brute_force(S, N, data):
    cells = st.lists(st.lists(st.integers(0, 1), min_size=N, max_size=N), min_size=S, max_size=S)
    pred, lab = data.draw(cells), data.draw(cells)
    micro, per = concept_scores(np.array(pred), np.array(lab))
    assert micro == pytest.approx(_brute(pred, lab), abs=1e-12)
    assert len(per) == N
    assert per[0] == pytest.approx(_brute([[r[0]] for r in pred], [[r[0]] for r in lab]), abs=1e-12)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=50))
def test_report_invariants(pairs):
    p, y = zip(*pairs)
    r = f1(list(p), list(y))
    assert r.n_records == len(pairs)
    if r.precision + r.recall:
        assert r.task_f1 == pytest.approx(2 * r.precision * r.recall / (r.precision + r.recall))
    else:
        assert r.task_f1 == 0.0


def test_report_json_roundtrip():
    r = f1([1, 0, 1], [1, 1, 1], np.array([[1, 0]]), np.array([[1, 1]]), arm="cc")
    back = EvalReport.from_json(r.to_json())
    assert back == r and "\n" not in r.to_json()


def _report(task, concept, n=10):
    return EvalReport(task, 0.0, 0.0, Counts(0, 0, 0, n), concept)


def test_delta_cases():
    assert delta_report(_report(0.5, 0.5), _report(0.5, 0.5)) == Delta(0.0, 0.0)
    d = delta_report(_report(0.7, 0.85), _report(0.6, 0.57))
    assert d.delta_c == pytest.approx(0.28) and d.delta_v == pytest.approx(0.1)
    with pytest.raises(DatasetMismatch):
        delta_report(_report(0.5, 0.5, 10), _report(0.5, 0.5, 11))


@settings(max_examples=200)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_delta_antisymmetry(a, b, c, d):
    x, y = delta_report(_report(a, b), _report(c, d)), delta_report(_report(c, d), _report(a, b))
    assert x.delta_c == -y.delta_c and x.delta_v == -y.delta_v


def test_format_deltas():
    text = format_deltas([Delta(0.25, -0.5), Delta(0.0, 0.125)])
    assert text == "delta_c delta_v\n0.250000 -0.500000\n0.000000 0.125000\n"


def test_confusion_total():
    c = confusion([1, 0, 1, 0], [1, 1, 0, 0])
    assert c == Counts(1, 1, 1, 1) and c.total == 4
