"""Instance-mask detection metrics and measurement-error reports.

Matching follows the usual mAP convention: detections are visited in
descending confidence and each takes the unmatched ground truth with the
highest IoU, provided it clears the threshold. AP uses 101-point
interpolation of the monotone precision envelope.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import Decimal
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ValidationError


@dataclass
class ScoredDetection:
    mask: np.ndarray
    confidence: float

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0  # always 0 for instance detection

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValidationError("confusion counts must be nonnegative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


@dataclass
class MatchResult:
    counts: ConfusionCounts
    is_tp: List[bool]          # per prediction, in input order
    matched_gt: List[int]      # ground-truth index or -1, per prediction
    confidences: List[float]


@dataclass
class PrecisionRecall:
    precision: float
    recall: float
    precision_degenerate: bool = False
    recall_degenerate: bool = False

    @property
    def degenerate(self) -> bool:
        return self.precision_degenerate or self.recall_degenerate


@dataclass
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def mask_iou(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValidationError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def iou_matrix(preds: Sequence[ScoredDetection], gts: Sequence[np.ndarray]) -> np.ndarray:
    out = np.zeros((len(preds), len(gts)))
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            out[i, j] = mask_iou(p.mask, g)
    return out


def _confidence_order(confidences) -> np.ndarray:
    # stable: ties keep input order
    return np.argsort(-np.asarray(confidences, dtype=np.float64), kind="mergesort")


def match_from_ious(ious: np.ndarray, confidences, iou_threshold: float = 0.5) -> MatchResult:
    """Greedy confidence-ordered matching on a precomputed IoU matrix."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValidationError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    ious = np.asarray(ious, dtype=np.float64)
    if ious.ndim != 2 or ious.shape[0] != len(confidences):
        raise ValidationError(f"IoU matrix of shape {ious.shape} does not fit {len(confidences)} predictions")
    n_pred, n_gt = ious.shape
    taken = np.zeros(n_gt, dtype=bool)
    matched = [-1] * n_pred
    for i in _confidence_order(confidences):
        candidates = np.where(taken, -1.0, ious[i])
        j = int(np.argmax(candidates)) if n_gt else -1
        if j >= 0 and candidates[j] >= iou_threshold:
            taken[j] = True
            matched[i] = j
    tp = sum(m >= 0 for m in matched)
    counts = ConfusionCounts(tp=tp, fp=n_pred - tp, fn=n_gt - tp)
    return MatchResult(counts, [m >= 0 for m in matched], matched, [float(c) for c in confidences])


def match_instances(preds: Sequence[ScoredDetection], gts: Sequence[np.ndarray],
                    iou_threshold: float = 0.5) -> MatchResult:
    return match_from_ious(iou_matrix(preds, gts), [p.confidence for p in preds], iou_threshold)


def precision_recall(counts: ConfusionCounts) -> PrecisionRecall:
    """TP / (TP + FP) and TP / (TP + FN); a zero denominator yields 0 and a flag."""
    pred_total = counts.tp + counts.fp
    gt_total = counts.tp + counts.fn
    return PrecisionRecall(
        precision=counts.tp / pred_total if pred_total else 0.0,
        recall=counts.tp / gt_total if gt_total else 0.0,
        precision_degenerate=pred_total == 0,
        recall_degenerate=gt_total == 0,
    )


def average_precision(confidences, is_tp, n_gt: int) -> Tuple[float, PRCurve]:
    """101-point interpolated AP from pooled detections.

    ``confidences`` and ``is_tp`` may come from many images; ``n_gt`` is the
    total number of ground-truth instances. With no ground truth AP is 0.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    hits = np.asarray(is_tp, dtype=bool)
    order = _confidence_order(conf)
    hits = hits[order]
    tp_cum = np.cumsum(hits)
    fp_cum = np.cumsum(~hits)
    if n_gt == 0 or len(hits) == 0:
        recall = tp_cum / max(n_gt, 1)
        precision = tp_cum / np.maximum(tp_cum + fp_cum, 1)
        return 0.0, PRCurve(recall.astype(float), precision.astype(float))
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    thresholds = np.linspace(0.0, 1.0, 101)
    idx = np.searchsorted(recall, thresholds, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean()), PRCurve(recall, precision)


def average_precision_50(preds: Sequence[ScoredDetection], gts: Sequence[np.ndarray],
                         iou_threshold: float = 0.5) -> Tuple[float, PRCurve]:
    """Single-image, single-class AP at IoU 0.5 (equal to mAP@50 with one class)."""
    result = match_instances(preds, gts, iou_threshold)
    return average_precision(result.confidences, result.is_tp, len(gts))


def confusion_table(counts: ConfusionCounts) -> str:
    """2x2 table with predicted classes as rows and true classes as columns."""
    rows = [
        ("", "true pothole", "true background"),
        ("pred pothole", str(counts.tp), str(counts.fp)),
        ("pred background", str(counts.fn), str(counts.tn)),
    ]
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    return "\n".join(
        f"{r[0]:<{widths[0]}}  {r[1]:>{widths[1]}}  {r[2]:>{widths[2]}}" for r in rows
    )


# ---------------------------------------------------------------------------
# Measurement report
# ---------------------------------------------------------------------------

REPORT_COLUMNS = ("real_perimeter", "real_depth", "predicted_perimeter", "predicted_depth",
                  "diff_perimeter", "diff_depth")


def _exact_diff(predicted: float, real: float) -> float:
    # decimal arithmetic on the printed values so 125.1 - 127.6 is exactly -2.5
    return float(Decimal(repr(float(predicted))) - Decimal(repr(float(real))))


@dataclass
class MeasurementErrorRow:
    real_perimeter: float
    real_depth: float
    predicted_perimeter: float
    predicted_depth: float
    diff_perimeter: float = field(init=False)
    diff_depth: float = field(init=False)

    def __post_init__(self):
        self.diff_perimeter = _exact_diff(self.predicted_perimeter, self.real_perimeter)
        self.diff_depth = _exact_diff(self.predicted_depth, self.real_depth)

    def values(self) -> Tuple[float, ...]:
        return tuple(getattr(self, c) for c in REPORT_COLUMNS)


@dataclass
class MeasurementReport:
    rows: List[MeasurementErrorRow]
    mean_abs_diff_perimeter: float
    mean_abs_diff_depth: float

    def to_text(self) -> str:
        header = ("#", "real P", "real D", "pred P", "pred D", "diff P", "diff D")
        lines = [header]
        for i, row in enumerate(self.rows, start=1):
            v = row.values()
            lines.append((str(i), f"{v[0]:.1f}", f"{v[1]:.1f}", f"{v[2]:.1f}", f"{v[3]:.1f}",
                          f"{v[4]:+.1f}", f"{v[5]:+.1f}"))
        widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
        out = ["  ".join(cell.rjust(w) for cell, w in zip(line, widths)) for line in lines]
        out.append(f"mean |diff|: perimeter {self.mean_abs_diff_perimeter:.2f} cm, "
                   f"depth {self.mean_abs_diff_depth:.2f} cm")
        return "\n".join(out)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in self.rows:
            writer.writerow([f"{v:.1f}" for v in row.values()])
        return buf.getvalue()


def measurement_report(pairs: Sequence[Tuple[Tuple[float, float], Tuple[float, float]]]) -> MeasurementReport:
    """Signed errors (predicted - real) for ``((real_P, real_D), (pred_P, pred_D))`` pairs, in cm."""
    rows = [MeasurementErrorRow(rp, rd, pp, pd) for (rp, rd), (pp, pd) in pairs]
    if rows:
        mp = float(np.mean([abs(r.diff_perimeter) for r in rows]))
        md = float(np.mean([abs(r.diff_depth) for r in rows]))
    else:
        mp = md = 0.0
    return MeasurementReport(rows, mp, md)
