import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lesionaug.metrics import (ConfusionCounts, MetricsReport, confusion, evaluate_dataset,
                               metric_scores, thresholded_jaccard)

from oracles import brute_force_metrics


def test_confusion_examples():
    ones = np.ones((2, 2), np.uint8)
    zeros = np.zeros((2, 2), np.uint8)
    assert confusion(ones, ones) == ConfusionCounts(4, 0, 0, 0)
    assert confusion(zeros, ones) == ConfusionCounts(0, 0, 4, 0)
    assert confusion([[1, 0], [1, 0]], [[1, 1], [0, 0]]) == ConfusionCounts(1, 1, 1, 1)


def test_confusion_errors():
    with pytest.raises(ValueError, match="shape"):
        confusion(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError, match="binary"):
        confusion(np.full((2, 2), 2), np.zeros((2, 2)))


def test_scores_hand_values():
    s = metric_scores(ConfusionCounts(1, 1, 1, 1))
    assert s["dice"] == 0.5
    assert s["jaccard"] == pytest.approx(1 / 3, abs=1e-15)
    assert s["sensitivity"] == s["specificity"] == s["accuracy"] == 0.5


def test_scores_perfect_and_empty():
    assert set(metric_scores(ConfusionCounts(9, 0, 0, 0)).values()) == {1.0}
    assert set(metric_scores(ConfusionCounts(0, 0, 0, 9)).values()) == {1.0}
    with pytest.raises(ValueError):
        metric_scores(ConfusionCounts(0, 0, 0, 0))


def test_thresholded_jaccard_rule():
    assert thresholded_jaccard(0.70) == 0.70
    assert thresholded_jaccard(0.64) == 0.0
    assert thresholded_jaccard(0.65) == 0.65
    with pytest.raises(ValueError):
        thresholded_jaccard(1.2)
    with pytest.raises(ValueError):
        thresholded_jaccard(-0.1)


@given(st.floats(0, 1))
def test_thresholded_jaccard_idempotent(j):
    t = thresholded_jaccard(j)
    assert thresholded_jaccard(t) == t


@given(st.floats(0, 1), st.floats(0, 1))
def test_thresholded_jaccard_monotone(a, b):
    lo, hi = sorted((a, b))
    assert thresholded_jaccard(lo) <= thresholded_jaccard(hi)


mask_pairs = st.tuples(st.integers(1, 16), st.integers(1, 16)).flatmap(
    lambda shape: st.tuples(arrays(np.uint8, shape, elements=st.integers(0, 1)),
                            arrays(np.uint8, shape, elements=st.integers(0, 1))))


@settings(max_examples=200, deadline=None)
@given(mask_pairs)
def test_scores_match_oracle(pair):
    pred, gt = pair
    ours = metric_scores(confusion(pred, gt))
    ref = brute_force_metrics(pred, gt)
    for k, v in ref.items():
        assert abs(ours[k] - v) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(mask_pairs)
def test_dice_jaccard_identity(pair):
    s = metric_scores(confusion(*pair))
    assert s["dice"] == pytest.approx(2 * s["jaccard"] / (1 + s["jaccard"]), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(mask_pairs)
def test_symmetries(pair):
    pred, gt = pair
    a = metric_scores(confusion(pred, gt))
    b = metric_scores(confusion(gt, pred))
    assert a["dice"] == pytest.approx(b["dice"], abs=1e-15)
    c = metric_scores(confusion(1 - pred, 1 - gt))
    assert a["sensitivity"] == pytest.approx(c["specificity"], abs=1e-15)
    assert a["specificity"] == pytest.approx(c["sensitivity"], abs=1e-15)


def _pair_with_jaccard(num, den, n=20):
    # gt has `den` pixels, pred covers `num` of them: jaccard = num / den
    gt = np.zeros(n, np.uint8)
    gt[:den] = 1
    pred = np.zeros(n, np.uint8)
    pred[:num] = 1
    return pred.reshape(4, 5), gt.reshape(4, 5)


def test_evaluate_single_image():
    p, g = _pair_with_jaccard(3, 4)
    rep = evaluate_dataset({"a": p}, {"a": g})
    assert rep.n_images == 1
    assert rep.means == rep.per_image["a"]


def test_evaluate_threshold_then_average():
    p1, g1 = _pair_with_jaccard(4, 5)    # 0.8
    p2, g2 = _pair_with_jaccard(3, 5)    # 0.6
    rep = evaluate_dataset({"a": p1, "b": p2}, {"a": g1, "b": g2})
    assert rep.per_image["a"]["jaccard"] == pytest.approx(0.8)
    assert rep.per_image["b"]["t_jaccard"] == 0.0
    assert rep.means["t_jaccard"] == pytest.approx(0.4)
    assert rep.means["jaccard"] == pytest.approx(0.7)


def test_evaluate_errors():
    with pytest.raises(ValueError):
        evaluate_dataset({}, {})
    z = np.zeros((2, 2), np.uint8)
    with pytest.raises(ValueError, match="mismatch"):
        evaluate_dataset({"a": z}, {"b": z})


def test_report_text_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    preds = {f"im{i}": (rng.random((6, 6)) > 0.5).astype(np.uint8) for i in range(4)}
    gts = {k: (rng.random((6, 6)) > 0.5).astype(np.uint8) for k in preds}
    rep = evaluate_dataset(preds, gts, header={"resolution": "6x6"})
    text = rep.to_text()
    lines = [l for l in text.splitlines() if not l.startswith("#")]
    assert len(lines) == 5 and lines[-1].startswith("MEAN ")
    assert all(len(l.split()) == 7 for l in lines)
    assert all(len(tok.split(".")[1]) == 6 for tok in lines[0].split()[1:])
    rep.save(tmp_path / "r.txt")
    back = MetricsReport.load(tmp_path / "r.txt")
    assert back.header["resolution"] == "6x6"
    assert back.n_images == 4
    for k, v in rep.means.items():
        assert math.isclose(back.means[k], v, abs_tol=5e-7)
