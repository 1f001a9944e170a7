"""Independent reference implementations used by several test modules."""
import itertools

import numpy as np


def exhaustive_match(ious, confidences, thr):
    """Best injective assignment, judged lexicographically in confidence order.

    Each candidate assignment is scored by the tuple of IoUs its predictions
    receive (-1 when unmatched), predictions listed by descending confidence.
    """
    n_pred, n_gt = ious.shape
    order = np.argsort(-np.asarray(confidences), kind="mergesort")
    best_key, best = None, None
    for k in range(min(n_pred, n_gt) + 1):
        for preds in itertools.combinations(range(n_pred), k):
            for gts in itertools.permutations(range(n_gt), k):
                if any(ious[p, g] < thr for p, g in zip(preds, gts)):
                    continue
                assign = dict(zip(preds, gts))
                key = tuple(ious[i, assign[i]] if i in assign else -1.0 for i in order)
                if best_key is None or key > best_key:
                    best_key, best = key, assign
    return [best.get(i, -1) for i in range(n_pred)]


def convex_polygon(rng, size):
    """Random convex polygon: sorted angles on an ellipse."""
    n = rng.integers(3, 12)
    cx, cy = rng.uniform(0, size, 2)
    rx, ry = rng.uniform(1, size / 2, 2)
    t = np.sort(rng.uniform(0, 2 * np.pi, n))
    return np.column_stack([cx + rx * np.cos(t), cy + ry * np.sin(t)])


def convex_cover(verts, size):
    """Pixel centers strictly on the interior side of every edge."""
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    x0, y0 = verts[:, 0], verts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    cross = (x1 - x0)[:, None, None] * (ys - y0[:, None, None]) - (y1 - y0)[:, None, None] * (xs - x0[:, None, None])
    return np.all(cross > 0, axis=0) | np.all(cross < 0, axis=0)
