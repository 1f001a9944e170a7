"""
Detection metrics on instance masks
===================================

Confidence-ordered matching at IoU 0.5, precision and recall, AP by
101-point interpolation, and a real-versus-predicted error table.
"""

import numpy as np

from pothole_rgbd.evaluation import (ConfusionCounts, ScoredDetection, average_precision_50, confusion_table,
                                     match_instances, measurement_report, precision_recall)


def square(x, y, size=4, shape=(20, 20)):
    m = np.zeros(shape, dtype=bool)
    m[y:y + size, x:x + size] = True
    return m


gts = [square(1, 1), square(10, 2), square(4, 12)]
preds = [ScoredDetection(square(1, 1), 0.95),
         ScoredDetection(square(2, 1), 0.90),   # duplicate of the first pothole
         ScoredDetection(square(10, 3), 0.70),
         ScoredDetection(square(15, 15), 0.40)]  # nothing there

result = match_instances(preds, gts)
print("TP flags per prediction:", result.is_tp)
print(confusion_table(result.counts))
pr = precision_recall(result.counts)
print(f"precision {pr.precision:.3f}  recall {pr.recall:.3f}")
ap, curve = average_precision_50(preds, gts)
print("AP@50", round(ap, 4), "PR points", [(round(r, 2), round(p, 2)) for r, p in curve.points])

# %%
# Counts from a full validation split
pr = precision_recall(ConfusionCounts(tp=151, fp=10, fn=16))
print(f"\nprecision {100 * pr.precision:.1f}%  recall {100 * pr.recall:.1f}%")

# %%
# Field measurements in centimeters: (perimeter, depth) real vs predicted
report = measurement_report([((127.6, 6.2), (125.1, 6.0)), ((96.3, 4.8), (97.9, 5.0)),
                             ((104.2, 5.5), (101.7, 5.3)), ((88.5, 3.9), (90.2, 4.2)),
                             ((144.8, 5.4), (141.6, 5.7))])
print()
print(report.to_text())
