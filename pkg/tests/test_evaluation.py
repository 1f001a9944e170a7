import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pothole_rgbd.errors import ValidationError
from pothole_rgbd.evaluation import (
    REPORT_COLUMNS,
    ConfusionCounts,
    ScoredDetection,
    average_precision,
    average_precision_50,
    confusion_table,
    mask_iou,
    match_from_ious,
    match_instances,
    measurement_report,
    precision_recall,
)

from oracles import exhaustive_match

TABLE_PAIRS = [
    ((127.6, 6.2), (125.1, 6.0)),
    ((96.3, 4.8), (97.9, 5.0)),
    ((104.2, 5.5), (101.7, 5.3)),
    ((88.5, 3.9), (90.2, 4.2)),
    ((144.8, 5.4), (141.6, 5.7)),
]


def box(shape, x0, y0, x1, y1):
    m = np.zeros(shape, dtype=bool)
    m[y0:y1, x0:x1] = True
    return m


def random_boxes(rng, n, shape=(12, 12)):
    out = []
    for _ in range(n):
        x0, y0 = rng.integers(0, shape[1] - 2), rng.integers(0, shape[0] - 2)
        out.append(box(shape, x0, y0, x0 + rng.integers(2, 6), y0 + rng.integers(2, 6)))
    return out


# --- IoU ------------------------------------------------------------------

def test_iou_examples():
    a = box((3, 4), 0, 0, 2, 1)
    assert mask_iou(a, a) == 1.0
    assert mask_iou(a, box((3, 4), 2, 2, 4, 3)) == 0.0
    assert mask_iou(a, box((3, 4), 1, 0, 3, 1)) == pytest.approx(1 / 3, abs=1e-15)
    assert mask_iou(np.zeros((2, 2)), np.zeros((2, 2))) == 0.0
    with pytest.raises(ValidationError):
        mask_iou(np.ones((2, 2)), np.ones((2, 3)))


# --- matching -------------------------------------------------------------

def test_match_examples():
    g = box((8, 8), 1, 1, 5, 5)
    r = match_instances([ScoredDetection(g, 0.7)], [g])
    assert (r.counts.tp, r.counts.fp, r.counts.fn) == (1, 0, 0)
    r = match_instances([], [g, g, g])
    assert (r.counts.tp, r.counts.fp, r.counts.fn) == (0, 0, 3)
    near = box((8, 8), 1, 1, 5, 6)
    r = match_instances([ScoredDetection(near, 0.8), ScoredDetection(g, 0.9)], [g])
    assert (r.counts.tp, r.counts.fp, r.counts.fn) == (1, 1, 0)
    assert r.is_tp == [False, True] and r.matched_gt == [-1, 0]


def test_match_threshold_and_validation():
    g = box((8, 8), 0, 0, 4, 4)
    half = box((8, 8), 0, 0, 4, 2)
    assert match_instances([ScoredDetection(half, 0.5)], [g], 0.5).counts.tp == 1
    assert match_instances([ScoredDetection(half, 0.5)], [g], 0.51).counts.tp == 0
    for thr in (0.0, 1.5):
        with pytest.raises(ValidationError):
            match_instances([], [g], thr)
    with pytest.raises(ValidationError):
        ScoredDetection(g, 1.2)


def test_match_ties_keep_input_order():
    g = box((6, 6), 0, 0, 3, 3)
    r = match_instances([ScoredDetection(g, 0.5), ScoredDetection(g, 0.5)], [g])
    assert r.is_tp == [True, False]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_count_invariants(seed):
    rng = np.random.default_rng(seed)
    gts = random_boxes(rng, rng.integers(0, 6))
    preds = [ScoredDetection(m, float(rng.random())) for m in random_boxes(rng, rng.integers(0, 6))]
    c = match_instances(preds, gts).counts
    assert c.tp + c.fn == len(gts)
    assert c.tp + c.fp == len(preds)
    assert c.tn == 0


def test_greedy_equals_exhaustive_on_distinct_ious():
    rng = np.random.default_rng(8)
    checked = 0
    while checked < 150:
        gts = random_boxes(rng, rng.integers(1, 6))
        preds = random_boxes(rng, rng.integers(1, 6))
        conf = rng.random(len(preds))
        ious = np.array([[mask_iou(p, g) for g in gts] for p in preds])
        positive = ious[ious > 0]
        if len(np.unique(positive)) != len(positive) or len(np.unique(conf)) != len(conf):
            continue
        r = match_from_ious(ious, conf, 0.5)
        assert r.matched_gt == exhaustive_match(ious, conf, 0.5)
        checked += 1


def test_counts_add():
    assert ConfusionCounts(1, 2, 3) + ConfusionCounts(4, 5, 6) == ConfusionCounts(5, 7, 9)
    with pytest.raises(ValidationError):
        ConfusionCounts(-1, 0, 0)


# --- precision / recall ---------------------------------------------------

def test_precision_recall_examples():
    pr = precision_recall(ConfusionCounts(151, 10, 16))
    assert pr.precision == pytest.approx(151 / 161, abs=1e-15)
    assert pr.recall == pytest.approx(151 / 167, abs=1e-15)
    assert not pr.degenerate
    pr = precision_recall(ConfusionCounts(0, 0, 0))
    assert (pr.precision, pr.recall) == (0.0, 0.0)
    assert pr.precision_degenerate and pr.recall_degenerate
    pr = precision_recall(ConfusionCounts(5, 0, 0))
    assert (pr.precision, pr.recall) == (1.0, 1.0)
    pr = precision_recall(ConfusionCounts(0, 0, 4))
    assert pr.precision_degenerate and not pr.recall_degenerate and pr.recall == 0.0


def test_confusion_table_layout():
    lines = confusion_table(ConfusionCounts(151, 10, 16)).splitlines()
    assert lines[0].split() == ["true", "pothole", "true", "background"]
    assert lines[1].split() == ["pred", "pothole", "151", "10"]
    assert lines[2].split() == ["pred", "background", "16", "0"]


# --- average precision ----------------------------------------------------

def test_ap_examples():
    g = box((8, 8), 1, 1, 5, 5)
    assert average_precision_50([ScoredDetection(g, 0.9)], [g])[0] == 1.0
    far = box((8, 8), 6, 6, 8, 8)
    ap, curve = average_precision_50([ScoredDetection(g, 0.9), ScoredDetection(far, 0.8)], [g])
    assert ap == 1.0
    assert curve.points == [(1.0, 1.0), (1.0, 0.5)]
    assert average_precision_50([], [g])[0] == 0.0
    assert average_precision([0.4], [False], 0)[0] == 0.0


def test_ap_hand_sweep():
    # TP, FP, TP over 2 gts: envelope is 1.0 up to recall 0.5 then 2/3
    ap, curve = average_precision([0.9, 0.8, 0.7], [True, False, True], 2)
    expected = (51 * 1.0 + 50 * (2 / 3)) / 101
    assert ap == pytest.approx(expected, abs=1e-15)
    np.testing.assert_allclose(curve.recall, [0.5, 0.5, 1.0])


def test_ap_partial_recall():
    # one of four gts found: recall thresholds 0..0.25 have precision 1
    ap, _ = average_precision([0.9], [True], 4)
    assert ap == pytest.approx(26 / 101, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_ap_bounds_and_rank_invariance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(0, 15))
    conf = rng.random(n)
    hits = rng.random(n) < 0.6
    n_gt = int(hits.sum() + rng.integers(0, 4))
    ap, curve = average_precision(conf, hits, n_gt)
    assert 0.0 <= ap <= 1.0
    if n:
        assert ap <= curve.precision.max() + 1e-12
        assert np.all(np.diff(curve.recall) >= 0)
    for f in (lambda c: c ** 3, lambda c: 0.1 + 0.5 * c, lambda c: np.log1p(c) / 2):
        assert average_precision(f(conf), hits, n_gt)[0] == ap


# --- measurement report ---------------------------------------------------

def test_report_reproduces_table_differences():
    report = measurement_report(TABLE_PAIRS)
    assert [r.diff_perimeter for r in report.rows] == [-2.5, 1.6, -2.5, 1.7, -3.2]
    assert [r.diff_depth for r in report.rows] == [-0.2, 0.2, -0.2, 0.3, 0.3]
    assert report.mean_abs_diff_perimeter == pytest.approx(2.3, abs=1e-12)
    assert report.mean_abs_diff_depth == pytest.approx(0.24, abs=1e-12)


def test_report_identical_and_empty():
    report = measurement_report([((50.0, 3.0), (50.0, 3.0))])
    assert report.rows[0].diff_perimeter == 0.0 and report.rows[0].diff_depth == 0.0
    empty = measurement_report([])
    assert empty.rows == [] and empty.mean_abs_diff_depth == 0.0


def test_report_formats():
    report = measurement_report(TABLE_PAIRS[:1])
    csv_lines = report.to_csv().splitlines()
    assert csv_lines[0] == ",".join(REPORT_COLUMNS)
    assert csv_lines[1] == "127.6,6.2,125.1,6.0,-2.5,-0.2"
    text = report.to_text().splitlines()
    assert text[1].split() == ["1", "127.6", "6.2", "125.1", "6.0", "-2.5", "-0.2"]
    assert "2.50" in text[-1]
