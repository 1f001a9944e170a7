"""Command-line entry point: ``pothole-rgbd <subcommand> ...``.

Exit codes: 0 success, 1 some frames failed, 2 bad configuration or usage.
Data goes to files or stdout; diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import neural_blocks
from .dataset_io import load_depth_frame, load_instance_masks, read_manifest, validate_record
from .errors import PotholeError
from .evaluation import ConfusionCounts, ScoredDetection, average_precision, confusion_table, match_instances, \
    precision_recall
from .geometry import MeasureOptions, measure_frame
from .synth import PotholeSpec, SceneSpec, write_scene_dataset

log = logging.getLogger("pothole_rgbd")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2

MEASURE_COLUMNS = ("frame", "instance", "perimeter_mm", "depth_mm", "h_p_mm", "h_c_mm",
                   "pixel_area", "components", "flags")


def _statistic(name: str):
    return "max" if name == "max" else float(name.lstrip("p"))


def _frame_masks(record, args):
    if args.use_labels:
        _, masks = load_instance_masks(record)
        return masks
    pred_path = Path(args.predictions) / record.label_path.name
    if not pred_path.is_file():
        raise PotholeError(f"missing prediction file {pred_path}")
    _, masks = load_instance_masks(record, pred_path, with_confidence=True)
    return masks


def _measure_record(record, args, options):
    validate_record(record)
    frame = load_depth_frame(record.depth_path, record.intrinsics)
    masks = _frame_masks(record, args)
    return measure_frame(frame, masks, record.intrinsics.camera, options)


def _run_frames(records, fn, threads: int):
    def safe(record):
        try:
            return fn(record), None
        except PotholeError as exc:
            return None, exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(safe, records))
    return [safe(r) for r in records]


def _load_records(manifest):
    try:
        return read_manifest(manifest)
    except PotholeError as exc:
        log.error("%s", exc)
        return None


def cmd_measure(args) -> int:
    records = _load_records(args.manifest)
    if records is None:
        return EXIT_USAGE
    options = MeasureOptions(_statistic(args.depth_statistic), args.perimeter_mode)
    results = _run_frames(records, lambda r: _measure_record(r, args, options), args.threads)

    status = EXIT_OK
    with open(args.output, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MEASURE_COLUMNS)
        for record, (measurements, error) in zip(records, results):
            if error is not None:
                log.error("frame %s: %s", record.frame_id, error)
                status = EXIT_PARTIAL
                continue
            for i, m in enumerate(measurements):
                writer.writerow([record.frame_id, i, f"{m.perimeter_mm:.4f}", f"{m.depth_mm:.4f}",
                                 f"{m.h_p_mm:.4f}", f"{m.h_c_mm:.4f}", m.pixel_area, m.components,
                                 ";".join(m.flags)])
    return status


def _evaluate_record(record, predictions_dir, iou_threshold):
    validate_record(record)
    _, gt_masks = load_instance_masks(record)
    pred_path = Path(predictions_dir) / record.label_path.name
    if pred_path.is_file():
        labels, pred_masks = load_instance_masks(record, pred_path, with_confidence=True)
        preds = [ScoredDetection(m, lab.confidence) for lab, m in zip(labels, pred_masks)]
    else:
        log.warning("frame %s: no prediction file %s, counting zero detections", record.frame_id, pred_path)
        preds = []
    return match_instances(preds, gt_masks, iou_threshold), len(gt_masks)


def cmd_eval(args) -> int:
    records = _load_records(args.gt_manifest)
    if records is None:
        return EXIT_USAGE
    if not 0.0 < args.iou_threshold <= 1.0:
        log.error("--iou-threshold must lie in (0, 1]")
        return EXIT_USAGE
    results = _run_frames(records, lambda r: _evaluate_record(r, args.predictions, args.iou_threshold),
                          args.threads)

    status = EXIT_OK
    counts = ConfusionCounts()
    confidences, hits, n_gt = [], [], 0
    for record, (result, error) in zip(records, results):
        if error is not None:
            log.error("frame %s: %s", record.frame_id, error)
            status = EXIT_PARTIAL
            continue
        match, gts = result
        counts = counts + match.counts
        confidences += match.confidences
        hits += match.is_tp
        n_gt += gts
    pr = precision_recall(counts)
    ap, _ = average_precision(confidences, hits, n_gt)

    print(f"precision: {100 * pr.precision:.1f}%" + (" (degenerate: no detections)" if pr.precision_degenerate else ""))
    print(f"recall:    {100 * pr.recall:.1f}%" + (" (degenerate: no ground truth)" if pr.recall_degenerate else ""))
    print(f"AP@50:     {100 * ap:.1f}%")
    print(confusion_table(counts))

    summary = {
        "tp": counts.tp, "fp": counts.fp, "fn": counts.fn, "tn": counts.tn,
        "precision": pr.precision, "recall": pr.recall, "ap50": ap,
        "precision_degenerate": pr.precision_degenerate, "recall_degenerate": pr.recall_degenerate,
        "iou_threshold": args.iou_threshold, "frames": len(records),
    }
    Path(args.output).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return status


def _random_layout(spec: SceneSpec, rng: np.random.Generator, count: int, depression: float, profile: str):
    holes = []
    occupied = np.zeros((spec.height, spec.width), dtype=bool)
    ys, xs = np.mgrid[0:spec.height, 0:spec.width]
    for _ in range(200):
        if len(holes) == count:
            break
        a, b = rng.uniform(20, 70, size=2)
        cx = rng.uniform(a + 1, spec.width - a - 1)
        cy = rng.uniform(b + 1, spec.height - b - 1)
        # one pixel of clearance keeps footprints from touching
        grown = ((xs + 0.5 - cx) / (a + 1.5)) ** 2 + ((ys + 0.5 - cy) / (b + 1.5)) ** 2 <= 1
        if (grown & occupied).any():
            continue
        occupied |= grown
        holes.append(PotholeSpec((cx, cy), (a, b), depression, profile))
    return holes


def cmd_synth(args) -> int:
    if args.count < 0:
        log.error("--count must be nonnegative")
        return EXIT_USAGE
    specs = []
    try:
        for i in range(args.count):
            spec = SceneSpec(width=args.width, height=args.height, plane_depth_mm=args.plane_depth,
                             noise_sigma_mm=args.noise_sigma, camera_jitter_mm=args.jitter,
                             rng_seed=args.seed + i, fx=args.fx, fy=args.fy)
            if args.potholes_per_scene > 1:
                rng = np.random.default_rng(args.seed + i)
                spec.potholes = _random_layout(spec, rng, args.potholes_per_scene, args.depression, args.profile)
            else:
                r = args.radius[i % len(args.radius)]
                spec.potholes = [PotholeSpec((args.width / 2, args.height / 2), (r, r), args.depression, args.profile)]
            specs.append(spec)
        manifest = write_scene_dataset(args.output_dir, specs, args.depth_unit)
    except PotholeError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    print(manifest)
    return EXIT_OK


def cmd_gradcheck(args, blocks=None) -> int:
    if not 0.0 < args.epsilon <= 1e-3:
        log.error("--epsilon must lie in (0, 1e-3]")
        return EXIT_USAGE
    if args.trials <= 0:
        log.warning("no trials requested")
        return EXIT_OK
    blocks = neural_blocks.BLOCKS if blocks is None else blocks
    rng = np.random.default_rng(args.seed)
    status = EXIT_OK
    for name in neural_blocks.GRADCHECK_BLOCKS:
        worst = 0.0
        for _ in range(args.trials):
            inputs = neural_blocks.random_gradcheck_inputs(name, rng)
            worst = max(worst, neural_blocks.finite_diff_gradcheck(name, inputs, args.epsilon, blocks))
        ok = worst <= args.tolerance
        print(f"{name:10s} max relative error {worst:.3e}  {'ok' if ok else 'FAIL'}")
        if not ok:
            status = EXIT_PARTIAL
    return status


def cmd_flops(args) -> int:
    try:
        lines = Path(args.spec_file).read_text().splitlines()
    except OSError as exc:
        log.error("cannot read %s: %s", args.spec_file, exc)
        return EXIT_USAGE
    total = 0
    layers = []
    for number, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        fields = text.split()
        try:
            if len(fields) != 6:
                raise ValueError(f"expected 6 fields 'c_in c_out k_h k_w h_out w_out', got {len(fields)}")
            spec = neural_blocks.ConvLayerSpec(*(int(f) for f in fields))
        except (ValueError, PotholeError) as exc:
            log.error("%s:%d: %s", args.spec_file, number, exc)
            return EXIT_USAGE
        layers.append((number, neural_blocks.conv_flops(spec)))
    for i, (_, flops) in enumerate(layers):
        print(f"layer {i}: {flops:,}")
        total += flops
    print(f"total: {total:,}")
    return EXIT_OK


def cmd_bench(args) -> int:
    records = _load_records(args.manifest)
    if records is None:
        return EXIT_USAGE
    options = MeasureOptions(_statistic(args.depth_statistic), args.perimeter_mode)
    start = time.perf_counter()
    failures = 0
    for _ in range(args.repeat):
        for record in records:
            try:
                _measure_record(record, args, options)
            except PotholeError as exc:
                log.error("frame %s: %s", record.frame_id, exc)
                failures += 1
    elapsed = time.perf_counter() - start
    frames = len(records) * args.repeat
    rate = frames / elapsed if elapsed > 0 else float("inf")
    print(f"{frames} frames in {elapsed:.3f} s ({rate:.1f} frames/s)")
    return EXIT_PARTIAL if failures else EXIT_OK


def _add_measure_flags(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--predictions", help="directory of prediction label files (with confidence column)")
    src.add_argument("--use-labels", action="store_true", help="measure the ground-truth label polygons")
    p.add_argument("--depth-statistic", choices=("max", "p95"), default="p95")
    p.add_argument("--perimeter-mode", choices=("closed", "open"), default="closed")
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pothole-rgbd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("measure", help="perimeter and depth for every instance in a manifest")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True, help="CSV file, one row per instance")
    _add_measure_flags(p)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("eval", help="precision, recall and AP@50 of predictions against labels")
    p.add_argument("gt_manifest")
    p.add_argument("predictions", help="directory of prediction label files")
    p.add_argument("-o", "--output", required=True, help="JSON summary file")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic dataset with known potholes")
    p.add_argument("output_dir")
    p.add_argument("--count", type=int, default=3)
    p.add_argument("--radius", type=float, nargs="+", default=[20.0, 50.0, 100.0])
    p.add_argument("--potholes-per-scene", type=int, default=1)
    p.add_argument("--depression", type=float, default=50.0)
    p.add_argument("--profile", choices=("flat-bottom", "spherical-cap"), default="flat-bottom")
    p.add_argument("--plane-depth", type=float, default=800.0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--fx", type=float, default=640.0)
    p.add_argument("--fy", type=float, default=640.0)
    p.add_argument("--depth-unit", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("flops", help="FLOPs of conv layers listed as 'c_in c_out k_h k_w h_out w_out'")
    p.add_argument("spec_file")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("bench", help="frames per second of the measurement pipeline")
    p.add_argument("manifest")
    p.add_argument("--repeat", type=int, default=1)
    _add_measure_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


class _StderrHandler(logging.StreamHandler):
    """Writes to whatever ``sys.stderr`` is at emit time."""

    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, value):
        pass


def main(argv=None) -> int:
    if not log.handlers:
        handler = _StderrHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
        log.addHandler(handler)
        log.setLevel(logging.INFO)
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        log.error("--threads must be at least 1")
        return EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
