import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import ks_2samp, kstwobign
from sklearn.metrics import precision_recall_fscore_support

from mbodl import eval as ev

from oracles import weighted_metrics_by_hand

PRED = [0, 0, 1, 1, 1, 2, 2, 0, 2]
TRUE = [0, 1, 1, 1, 2, 2, 0, 0, 2]


def test_hand_case():
    got = ev.metrics(PRED, TRUE)
    want = weighted_metrics_by_hand(PRED, TRUE)
    for key in want:
        assert got[key] == pytest.approx(want[key], abs=1e-12)
    assert got["accuracy"] == pytest.approx(600 / 9)
    p, r, f, _ = precision_recall_fscore_support(TRUE, PRED, average="weighted", zero_division=0)
    assert (got["precision"], got["recall"], got["f1"]) == pytest.approx((100 * p, 100 * r, 100 * f))


labels = st.lists(st.integers(0, 2), min_size=1, max_size=80)


@given(labels.flatmap(lambda t: st.tuples(st.just(t), st.lists(st.integers(0, 2), min_size=len(t),
                                                                  max_size=len(t)))))
def test_metrics_match_reference(pair):
    true, pred = pair
    got = ev.metrics(pred, true)
    want = weighted_metrics_by_hand(pred, true)
    for key in want:
        assert got[key] == pytest.approx(want[key], abs=1e-9)
    assert abs(got["recall"] - got["accuracy"]) <= 1e-12 * 100


def test_never_predicted_class_has_zero_precision():
    m = ev.metrics([0, 0, 0], [0, 1, 2])
    assert m["precision"] == pytest.approx(100 / 3 * 1 / 3)
    conf = ev.confusion([0, 0], [0, 0])
    assert conf.empty_rows == [1, 2]
    assert conf.matrix.tolist()[0] == [1.0, 0.0, 0.0]


def test_input_validation():
    with pytest.raises(ev.EvalError, match="length"):
        ev.metrics([0], [0, 1])
    with pytest.raises(ev.EvalError):
        ev.metrics([3], [0])
    with pytest.raises(ev.EvalError):
        ev.metrics([], [])


def test_confusion_rows_sum_to_one():
    conf = ev.confusion(PRED, TRUE)
    assert np.allclose(conf.matrix.sum(axis=1), 1.0)
    assert conf.counts.sum() == 9


def test_ks_against_scipy():
    r = ev.ks_statistic([1, 2, 3], [2, 3, 4])
    assert r.statistic == pytest.approx(1 / 3)
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=200), rng.normal(0.3, size=150)
    ref = ks_2samp(a, b)
    got = ev.ks_statistic(a, b)
    assert got.statistic == pytest.approx(ref.statistic, abs=1e-12)
    # limiting distribution, without scipy's finite-sample correction
    assert got.p_value == pytest.approx(kstwobign.sf(ref.statistic * np.sqrt(200 * 150 / 350)))


def _set(name, probs, ticks=None):
    probs = np.asarray(probs, dtype=float)
    return ev.SignalSet(name, probs, np.arange(len(probs)) if ticks is None else ticks)


def test_pearson_self_and_negation():
    rng = np.random.default_rng(1)
    p = rng.dirichlet([1, 1, 1], size=50)
    flipped = p[:, ::-1]
    flat = np.full((50, 3), 1 / 3)
    corr = ev.pearson_matrix([_set("a", p), _set("b", flipped), _set("c", flat)])
    assert corr.matrix[0, 0] == 1.0
    assert corr.matrix[0, 1] == pytest.approx(-1.0)
    assert np.isnan(corr.matrix[0, 2])
    assert ("a", "c") in corr.undefined


def test_signal_set_validation():
    with pytest.raises(ev.EvalError, match="probability"):
        _set("x", [[0.5, 0.6, 0.0]])
    with pytest.raises(ev.EvalError, match="aligned"):
        ev.ensemble([_set("a", [[1, 0, 0]]), _set("b", [[1, 0, 0]], np.array([7]))])


def test_ensemble_mean_and_names():
    a = _set("MBO-LSTM", [[1.0, 0.0, 0.0], [0.2, 0.3, 0.5]])
    b = _set("MBO-Attention", [[0.0, 0.0, 1.0], [0.4, 0.3, 0.3]])
    c = _set("LOB-MLP", [[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
    mean = ev.ensemble([a, b])
    assert np.allclose(mean.probs, [[0.5, 0.0, 0.5], [0.3, 0.3, 0.4]])
    named = ev.named_ensembles({s.name: s for s in (a, b, c)})
    assert set(named) == {"Ensemble-MBO", "Ensemble-LOB", "Ensemble-MBO-LOB"}
    assert np.array_equal(named["Ensemble-LOB"].probs, c.probs)
    assert np.allclose(named["Ensemble-MBO-LOB"].probs, (mean.probs + c.probs) / 2)
    assert set(ev.named_ensembles({"MBO-LSTM": a})) == {"Ensemble-MBO"}


def test_daily_accuracy_and_quartiles():
    dates = np.array(["2018-01-02"] * 4 + ["2018-01-03"] * 2, dtype="datetime64[D]")
    d = ev.daily_accuracy([0, 0, 1, 1, 2, 2], [0, 0, 1, 2, 0, 0], dates)
    assert [r["accuracy"] for r in d.days] == [75.0, 0.0]
    assert d.summary["min"] == 0.0 and d.summary["max"] == 75.0 and d.summary["median"] == 37.5
    with pytest.warns(UserWarning, match="2018-01-04"):
        ev.daily_accuracy([0], [0], dates[:1], expected_days=["2018-01-02", "2018-01-04"])
    assert ev.quartiles([1, 2, 3, 4, 5]) == {"min": 1, "q1": 2, "median": 3, "q3": 4, "max": 5}


def test_evaluate_report_shape():
    rng = np.random.default_rng(2)
    dates = np.repeat(np.datetime64("2018-01-02") + np.arange(4), 10)
    true = rng.integers(0, 3, 40)
    sets = [_set("a", rng.dirichlet([1, 1, 1], size=40)), _set("b", rng.dirichlet([1, 1, 1], size=40))]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        report = ev.evaluate(sets, true, dates)
    assert set(report["models"]) == {"a", "b"}
    assert len(report["models"]["a"]["daily"]) == 4
    assert "a vs b" in report["ks"]
    assert report["correlation"]["names"] == ["a", "b"]
