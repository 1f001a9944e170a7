"""One test per acceptance criterion; run with ``-s`` to see the PASS/FAIL lines."""
import math
import time

import numpy as np
import pytest

from pothole_rgbd.evaluation import (
    ConfusionCounts,
    ScoredDetection,
    average_precision,
    average_precision_50,
    mask_iou,
    match_from_ious,
    measurement_report,
    precision_recall,
)
from pothole_rgbd.dataset_io import rasterize_polygon
from pothole_rgbd.geometry import measure_frame
from pothole_rgbd.neural_blocks import (
    GRADCHECK_BLOCKS,
    ConvLayerSpec,
    DSConvKernel,
    SimAMConfig,
    conv2d_reference,
    conv_flops,
    dsconv_forward,
    gradcheck_errors,
    random_gradcheck_inputs,
    simam_attend,
    simam_weights,
)
from pothole_rgbd.synth import circle_scene, generate_scene

from oracles import convex_cover, convex_polygon, exhaustive_match

pytestmark = pytest.mark.acceptance


class Criterion:
    """Times a block, prints one PASS/FAIL line, then asserts."""

    def __init__(self, number: int, title: str, budget_s: float):
        self.number, self.title, self.budget = number, title, budget_s
        self.checks = []
        self.detail = ""

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def check(self, ok: bool, what: str):
        self.checks.append((bool(ok), what))

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        if exc_type is None:
            self.check(elapsed < self.budget, f"runtime {elapsed:.2f} s < {self.budget:g} s")
        failed = [what for ok, what in self.checks if not ok]
        verdict = "PASS" if exc_type is None and not failed else "FAIL"
        note = f"; failed: {', '.join(failed)}" if failed else ""
        print(f"\n[{verdict}] criterion {self.number:2d}: {self.title} ({elapsed:.2f} s) {self.detail}{note}")
        if exc_type is None:
            assert not failed, failed
        return False


def test_criterion_01_confusion_arithmetic():
    with Criterion(1, "precision/recall from 151/10/16", 1.0) as c:
        pr = precision_recall(ConfusionCounts(tp=151, fp=10, fn=16))
        c.detail = f"P={pr.precision:.4f} R={pr.recall:.4f}"
        c.check(round(pr.precision, 4) == 0.9379 and round(pr.recall, 4) == 0.9042, "4-digit values")
        c.check(abs(100 * pr.precision - 93.7) <= 0.2, "precision within 0.2 pp of 93.7")
        c.check(abs(100 * pr.recall - 90.4) <= 0.2, "recall within 0.2 pp of 90.4")


def test_criterion_02_measurement_report():
    pairs = [((127.6, 6.2), (125.1, 6.0)), ((96.3, 4.8), (97.9, 5.0)), ((104.2, 5.5), (101.7, 5.3)),
             ((88.5, 3.9), (90.2, 4.2)), ((144.8, 5.4), (141.6, 5.7))]
    with Criterion(2, "signed measurement differences", 1.0) as c:
        report = measurement_report(pairs)
        dp = [r.diff_perimeter for r in report.rows]
        dd = [r.diff_depth for r in report.rows]
        c.detail = f"perimeter {dp} depth {dd}"
        c.check(dp == [-2.5, 1.6, -2.5, 1.7, -3.2], "perimeter diffs exact")
        c.check(dd == [-0.2, 0.2, -0.2, 0.3, 0.3], "depth diffs exact")


def test_criterion_03_gradient_checks():
    rng = np.random.default_rng(2024)
    with Criterion(3, "finite-difference gradient checks, 20 trials per block", 30.0) as c:
        worst = {}
        for name in GRADCHECK_BLOCKS:
            per_input = {}
            for _ in range(20):
                errs = gradcheck_errors(name, random_gradcheck_inputs(name, rng), epsilon=1e-6)
                for key, err in errs.items():
                    per_input[key] = max(per_input.get(key, 0.0), err)
            worst[name] = per_input
        c.detail = "; ".join(f"{n} " + ",".join(f"{k}={v:.1e}" for k, v in d.items()) for n, d in worst.items())
        c.check(set(worst["dsconv"]) == {"input", "weights", "offsets"}, "dsconv checks all three gradients")
        for name, per_input in worst.items():
            for key, err in per_input.items():
                c.check(err <= 1e-5, f"{name}.{key} <= 1e-5")


def test_criterion_04_dsconv_degeneracy():
    rng = np.random.default_rng(4)
    with Criterion(4, "zero-offset DSConv equals axial convolution", 10.0) as c:
        worst = 0.0
        for i in range(100):
            extent = (3, 5, 9)[i % 3]
            axis = ("horizontal", "vertical")[(i // 3) % 2]
            n, ci, co = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
            h, w = rng.integers(3, 12, size=2)
            x = rng.normal(size=(n, ci, h, w))
            wts = rng.normal(size=(co, ci, extent))
            out = dsconv_forward(x, DSConvKernel(axis, wts, np.zeros((n, extent, h, w))))
            if axis == "horizontal":
                ref = conv2d_reference(x, wts[:, :, None, :], 1, (0, extent // 2), padding_mode="edge")
            else:
                ref = conv2d_reference(x, wts[:, :, :, None], 1, (extent // 2, 0), padding_mode="edge")
            worst = max(worst, float(np.max(np.abs(out - ref))))
        c.detail = f"max |diff| {worst:.1e}"
        c.check(worst <= 1e-12, "max abs diff <= 1e-12")


def test_criterion_05_simam_closed_forms():
    rng = np.random.default_rng(5)
    with Criterion(5, "SimAM constant channel and magnitude bound", 10.0) as c:
        target = 1.0 / (1.0 + math.exp(-0.5))
        const_err = 0.0
        for value in (-3.0, 0.0, 4.0, 1e3):
            w = simam_weights(np.full((2, 3, 5, 5), value), SimAMConfig(1e-4))
            const_err = max(const_err, float(np.max(np.abs(w - target))))
        violations = 0
        for _ in range(1000):
            shape = tuple(rng.integers(1, 6, size=4))
            x = rng.normal(0, rng.uniform(0.1, 10), size=shape)
            violations += int(np.sum(np.abs(simam_attend(x)) > np.abs(x)))
        c.detail = f"constant-channel err {const_err:.1e}, violations {violations}"
        c.check(const_err <= 1e-12, "sigmoid(0.5) within 1e-12")
        c.check(violations == 0, "|output| <= |input|")


def test_criterion_06_noise_free_circles():
    with Criterion(6, "noise-free circles r=20/50/100", 10.0) as c:
        parts = []
        for r in (20, 50, 100):
            spec = circle_scene(r)
            frame, masks, _ = generate_scene(spec)
            (m,) = measure_frame(frame, masks, spec.intrinsics)
            ref = 2 * math.pi * r * 1.25
            rel = m.perimeter_mm / ref - 1
            parts.append(f"r={r}: d={m.depth_mm:.3f} P={m.perimeter_mm:.2f}/{ref:.2f} ({100 * rel:+.1f}%)")
            c.check(abs(m.depth_mm - 50.0) <= 0.5, f"r={r} depth")
            c.check(abs(rel) <= 0.06, f"r={r} perimeter")
        c.detail = "; ".join(parts)


def test_criterion_07_camera_height_compensation():
    with Criterion(7, "depth stable under camera jitter", 10.0) as c:
        depths = []
        for jitter in (-100.0, 0.0, 100.0):
            spec = circle_scene(50, noise_sigma_mm=2.0, camera_jitter_mm=jitter, rng_seed=7)
            frame, masks, _ = generate_scene(spec)
            depths.append(measure_frame(frame, masks, spec.intrinsics)[0].depth_mm)
        span = max(depths) - min(depths)
        c.detail = f"depths {[round(d, 4) for d in depths]}, span {span:.2e} mm"
        c.check(span < 0.5, "span < 0.5 mm")


def test_criterion_08_noisy_robustness():
    # The spherical-cap profile is the one whose deepest point the p95
    # statistic estimates. A flat bottom under sigma=2 noise puts the 95th
    # percentile about 1.645 sigma (3.3 mm) below the floor, so the same
    # bound cannot hold there; that bias is reported alongside.
    with Criterion(8, "sigma=2 mm noise, p95, r=50, 10 seeds", 20.0) as c:
        cap_err, flat_err = [], []
        for seed in range(10):
            for profile, sink in (("spherical-cap", cap_err), ("flat-bottom", flat_err)):
                spec = circle_scene(50, noise_sigma_mm=2.0, rng_seed=seed, profile=profile)
                frame, masks, truth = generate_scene(spec)
                (m,) = measure_frame(frame, masks, spec.intrinsics)
                sink.append(m.depth_mm - truth.potholes[0].depth_mm)
        worst = max(abs(e) for e in cap_err)
        c.detail = (f"spherical-cap max |err| {worst:.2f} mm; "
                    f"flat-bottom err {min(flat_err):+.2f}..{max(flat_err):+.2f} mm (informational)")
        c.check(worst <= 2.0, "spherical-cap |err| <= 2 mm")


def test_criterion_09_matching_oracle():
    rng = np.random.default_rng(9)
    shape = (12, 12)

    def boxes(n):
        out = []
        for _ in range(n):
            x0, y0 = rng.integers(0, 10, size=2)
            m = np.zeros(shape, dtype=bool)
            m[y0:y0 + rng.integers(2, 6), x0:x0 + rng.integers(2, 6)] = True
            out.append(m)
        return out

    with Criterion(9, "greedy matching equals exhaustive assignment", 20.0) as c:
        checked = disagreements = 0
        while checked < 500:
            gts, preds = boxes(rng.integers(1, 6)), boxes(rng.integers(1, 6))
            conf = rng.random(len(preds))
            ious = np.array([[mask_iou(p, g) for g in gts] for p in preds])
            positive = ious[ious > 0]
            if len(np.unique(positive)) != len(positive):
                continue
            greedy = match_from_ious(ious, conf, 0.5).matched_gt
            disagreements += greedy != exhaustive_match(ious, conf, 0.5)
            checked += 1
        c.detail = f"{checked} instances, {disagreements} disagreements"
        c.check(disagreements == 0, "no disagreements")


def test_criterion_10_flops():
    with Criterion(10, "convolution FLOPs", 1.0) as c:
        base = (3, 16, 3, 3, 320, 320)
        value = conv_flops(ConvLayerSpec(*base))
        c.detail = f"{value:,}"
        c.check(value == 88_473_600, "3 16 3 3 320 320 -> 88,473,600")
        for i in range(6):
            for k in (2, 3, 7):
                fields = list(base)
                fields[i] *= k
                c.check(conv_flops(ConvLayerSpec(*fields)) == k * value, f"linear in field {i} (x{k})")


def test_criterion_11_rasterization_oracle():
    rng = np.random.default_rng(11)
    with Criterion(11, "scanline fill equals pixel-center oracle", 20.0) as c:
        mismatched = 0
        for _ in range(200):
            size = int(rng.integers(4, 65))
            verts = convex_polygon(rng, size)
            mismatched += int(np.count_nonzero(rasterize_polygon(verts, size, size) != convex_cover(verts, size)))
        c.detail = f"200 polygons, {mismatched} mismatched pixels"
        c.check(mismatched == 0, "exact match")


def test_criterion_12_ap_properties():
    rng = np.random.default_rng(12)
    with Criterion(12, "AP perfect/empty/rank invariance", 10.0) as c:
        g = np.zeros((10, 10), dtype=bool)
        g[2:6, 2:6] = True
        c.check(average_precision_50([ScoredDetection(g, 0.8)], [g])[0] == 1.0, "perfect detector")
        c.check(average_precision_50([], [g])[0] == 0.0, "zero detections")
        changed = 0
        transforms = (lambda s: s ** 2, lambda s: np.exp(3 * s), lambda s: 0.2 + 0.3 * s, np.arctan)
        for i in range(100):
            n = int(rng.integers(1, 20))
            conf = rng.random(n)
            hits = rng.random(n) < 0.5
            n_gt = int(hits.sum() + rng.integers(0, 5)) or 1
            ap = average_precision(conf, hits, n_gt)[0]
            changed += average_precision(transforms[i % 4](conf), hits, n_gt)[0] != ap
        c.detail = f"100 scenarios, {changed} changed under rescaling"
        c.check(changed == 0, "monotone rescaling invariance")
