"""Readers and writers for RGB-D pothole datasets.

On-disk layout:

* labels: one polygon per line, ``<class_id> u1 v1 u2 v2 ...`` with
  coordinates normalized to [0, 1]; prediction files append a confidence.
* depth: 16-bit single-channel PNG holding raw sensor counts, 0 = no return.
* intrinsics: ``key=value`` lines for fx, fy, cx, cy, width, height, depth_unit.
* manifest: an ``intrinsics=<path>`` header, then ``<rgb> <depth> <labels>``
  per record. Relative paths resolve against the manifest's directory.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import DepthFileError, LabelParseError, ManifestError, ValidationError
from .geometry import CameraIntrinsics, DepthFrame

# plain decimal literals only: no locale separators, no inf/nan
_NUMBER = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")


@dataclass
class PolygonLabel:
    class_id: int
    vertices: List[Tuple[float, float]]  # normalized (u, v)
    confidence: Optional[float] = None

    def pixel_vertices(self, img_w: int, img_h: int) -> List[Tuple[float, float]]:
        return [(u * img_w, v * img_h) for u, v in self.vertices]


@dataclass(frozen=True)
class IntrinsicsFile:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_unit: float = 1.0  # millimeters per raw count

    def __post_init__(self):
        if not self.depth_unit > 0:
            raise ValidationError(f"depth_unit must be positive, got {self.depth_unit}")

    @property
    def camera(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)


@dataclass
class DatasetRecord:
    rgb_path: Path
    depth_path: Path
    label_path: Path
    intrinsics: IntrinsicsFile
    line_number: int = 0

    @property
    def frame_id(self) -> str:
        return self.rgb_path.stem


# ---------------------------------------------------------------------------
# Labels
# ---------------------------------------------------------------------------

def _parse_number(token: str, line_number, path) -> float:
    if not _NUMBER.match(token):
        raise LabelParseError(f"not a number: {token!r}", line_number, path)
    return float(token)


def parse_yolo_polygon_line(line: str, img_w: int, img_h: int, with_confidence: bool = False,
                            line_number: Optional[int] = None, path=None):
    """Parse one label line; returns ``(PolygonLabel, pixel_vertices)``.

    With ``with_confidence`` the last value on the line is a detection score.
    """
    tokens = line.split()
    if not tokens:
        raise LabelParseError("empty label line", line_number, path)
    if not re.fullmatch(r"\d+", tokens[0]):
        raise LabelParseError(f"class id must be a nonnegative integer, got {tokens[0]!r}", line_number, path)
    class_id = int(tokens[0])
    values = [_parse_number(t, line_number, path) for t in tokens[1:]]

    confidence = None
    if with_confidence:
        if not values:
            raise LabelParseError("missing confidence value", line_number, path)
        confidence = values.pop()
        if not 0.0 <= confidence <= 1.0:
            raise LabelParseError(f"confidence {confidence} outside [0, 1]", line_number, path)
    if len(values) % 2:
        raise LabelParseError(f"odd number of coordinates ({len(values)})", line_number, path)
    if len(values) < 6:
        raise LabelParseError(f"polygon needs at least 3 vertices, got {len(values) // 2}", line_number, path)
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise LabelParseError(f"coordinate {v} outside [0, 1]", line_number, path)

    vertices = list(zip(values[0::2], values[1::2]))
    label = PolygonLabel(class_id, vertices, confidence)
    return label, label.pixel_vertices(img_w, img_h)


def format_yolo_polygon_line(label: PolygonLabel, precision: int = 6) -> str:
    parts = [str(label.class_id)]
    for u, v in label.vertices:
        parts.append(f"{u:.{precision}f}")
        parts.append(f"{v:.{precision}f}")
    if label.confidence is not None:
        parts.append(f"{label.confidence:.{precision}f}")
    return " ".join(parts)


def read_label_file(path, img_w: int, img_h: int, with_confidence: bool = False) -> List[PolygonLabel]:
    """All polygons in a label file. Blank lines are skipped; bad lines raise."""
    path = Path(path)
    labels = []
    try:
        text = path.read_bytes().decode("ascii")
    except OSError as exc:
        raise LabelParseError(f"cannot read label file ({exc})", path=path) from None
    except UnicodeDecodeError as exc:
        line_number = path.read_bytes()[:exc.start].count(b"\n") + 1
        raise LabelParseError("non-ASCII byte in label file", line_number, path) from None
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        label, _ = parse_yolo_polygon_line(line, img_w, img_h, with_confidence, number, path)
        labels.append(label)
    return labels


def write_label_file(path, labels: Sequence[PolygonLabel]) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for label in labels:
            fh.write(format_yolo_polygon_line(label) + "\n")


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------

def rasterize_polygon(vertices, w: int, h: int) -> np.ndarray:
    """Even-odd scanline fill sampled at pixel centers ``(col + 0.5, row + 0.5)``."""
    pts = np.asarray(vertices, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 3:
        raise ValidationError(f"polygon needs at least 3 vertices, got {len(pts)}")
    mask = np.zeros((h, w), dtype=bool)
    x0, y0 = pts[:, 0], pts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    centers_x = np.arange(w) + 0.5

    row_lo = max(int(np.floor(y0.min() - 0.5)), 0)
    row_hi = min(int(np.ceil(y0.max() - 0.5)), h - 1)
    for row in range(row_lo, row_hi + 1):
        yc = row + 0.5
        # half-open rules in y (edge straddles yc) and in x ([left, right))
        crosses = (y0 > yc) != (y1 > yc)
        if not crosses.any():
            continue
        xa, ya, xb, yb = x0[crosses], y0[crosses], x1[crosses], y1[crosses]
        xs = np.sort(xa + (yc - ya) * (xb - xa) / (yb - ya))
        for left, right in zip(xs[0::2], xs[1::2]):
            mask[row] |= (centers_x >= left) & (centers_x < right)
    return mask


def point_in_polygon(px: float, py: float, vertices) -> bool:
    """Even-odd ray-casting test for a single point."""
    pts = [tuple(map(float, p)) for p in vertices]
    inside = False
    j = len(pts) - 1
    for i in range(len(pts)):
        xi, yi = pts[i]
        xj, yj = pts[j]
        if (yi > py) != (yj > py):
            x_cross = xi + (py - yi) * (xj - xi) / (yj - yi)
            if px < x_cross:
                inside = not inside
        j = i
    return inside


# ---------------------------------------------------------------------------
# Depth and intrinsics
# ---------------------------------------------------------------------------

_INTRINSIC_KEYS = ("fx", "fy", "cx", "cy", "width", "height", "depth_unit")


def load_intrinsics(path) -> IntrinsicsFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except OSError as exc:
        raise ManifestError(f"cannot read intrinsics file {path}: {exc}") from None
    values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ManifestError(f"{path}:{number}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _INTRINSIC_KEYS:
            raise ManifestError(f"{path}:{number}: unknown key {key!r}")
        if not _NUMBER.match(value):
            raise ManifestError(f"{path}:{number}: {key} is not a number: {value!r}")
        values[key] = float(value)
    missing = [k for k in _INTRINSIC_KEYS if k not in values and k != "depth_unit"]
    if missing:
        raise ManifestError(f"{path}: missing keys {', '.join(missing)}")
    for key in ("width", "height"):
        if values[key] != int(values[key]) or values[key] < 1:
            raise ManifestError(f"{path}: {key} must be a positive integer")
        values[key] = int(values[key])
    try:
        return IntrinsicsFile(**values)
    except ValidationError as exc:
        raise ManifestError(f"{path}: {exc}") from None


def write_intrinsics(path, intrinsics: IntrinsicsFile) -> None:
    lines = [f"{key}={getattr(intrinsics, key)!r}" for key in _INTRINSIC_KEYS]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def _open_16bit(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as img:
            mode = img.mode
            if mode not in ("I;16", "I;16B", "I;16L"):
                raise DepthFileError(f"{path}: expected a 16-bit single-channel image, got mode {mode}")
            return np.array(img, dtype=np.uint16)
    except DepthFileError:
        raise
    except (OSError, ValueError) as exc:
        raise DepthFileError(f"{path}: cannot read depth image ({exc})") from None


def load_depth_frame(path, intrinsics: IntrinsicsFile) -> DepthFrame:
    """Raw counts times ``depth_unit`` millimeters; zero counts are invalid."""
    raw = _open_16bit(path)
    if raw.shape != (intrinsics.height, intrinsics.width):
        raise DepthFileError(
            f"{path}: depth image is {raw.shape[1]}x{raw.shape[0]}, "
            f"expected {intrinsics.width}x{intrinsics.height}"
        )
    valid = raw != 0
    return DepthFrame(raw.astype(np.float64) * intrinsics.depth_unit, valid)


def save_depth_png(path, depth_mm: np.ndarray, depth_unit: float = 1.0, valid: Optional[np.ndarray] = None) -> None:
    """Quantize millimeters to raw counts and write a 16-bit PNG."""
    counts = np.rint(np.asarray(depth_mm, dtype=np.float64) / depth_unit)
    if valid is not None:
        counts = np.where(valid, counts, 0)
    if counts.min(initial=0) < 0 or counts.max(initial=0) > 65535:
        raise ValidationError("depth counts do not fit in 16 bits")
    Image.fromarray(counts.astype(np.uint16)).save(path)


def image_size(path) -> Tuple[int, int]:
    """``(width, height)`` without decoding pixel data."""
    try:
        with Image.open(path) as img:
            return img.size
    except (OSError, ValueError) as exc:
        raise ManifestError(f"{path}: cannot read image ({exc})") from None


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def read_manifest(path) -> List[DatasetRecord]:
    """Parse a manifest without touching the referenced images."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from None
    base = path.parent
    intrinsics = None
    records = []
    for number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("intrinsics="):
            if intrinsics is not None:
                raise ManifestError(f"{path}:{number}: duplicate intrinsics header")
            intrinsics = load_intrinsics(base / line.split("=", 1)[1].strip())
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ManifestError(f"{path}:{number}: expected '<rgb> <depth> <labels>', got {line!r}")
        if intrinsics is None:
            raise ManifestError(f"{path}:{number}: record before the intrinsics= header")
        rgb, depth, labels = (base / p for p in parts)
        records.append(DatasetRecord(rgb, depth, labels, intrinsics, number))
    return records


def validate_record(record: DatasetRecord) -> None:
    """Check that files exist and agree on image size; raises ``ManifestError``."""
    where = f"record at line {record.line_number}"
    for p in (record.rgb_path, record.depth_path, record.label_path):
        if not p.is_file():
            raise ManifestError(f"{where}: missing file {p}")
    rgb_size = image_size(record.rgb_path)
    depth_size = image_size(record.depth_path)
    if rgb_size != depth_size:
        raise ManifestError(
            f"{where}: depth image {record.depth_path} is {depth_size[0]}x{depth_size[1]} "
            f"but RGB image {record.rgb_path} is {rgb_size[0]}x{rgb_size[1]}"
        )
    expected = (record.intrinsics.width, record.intrinsics.height)
    if rgb_size != expected:
        raise ManifestError(
            f"{where}: images are {rgb_size[0]}x{rgb_size[1]} but intrinsics declare {expected[0]}x{expected[1]}"
        )


def load_manifest(path) -> List[DatasetRecord]:
    """Parse and eagerly validate every record; all problems are reported together."""
    records = read_manifest(path)
    problems = []
    for record in records:
        try:
            validate_record(record)
        except ManifestError as exc:
            problems.append(str(exc))
    if problems:
        raise ManifestError("; ".join(problems))
    return records


def write_manifest(path, intrinsics_path, rows: Sequence[Tuple[str, str, str]]) -> None:
    lines = [f"intrinsics={intrinsics_path}"]
    lines += [" ".join(row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_instance_masks(record: DatasetRecord, label_path=None, with_confidence: bool = False):
    """Rasterized masks (and labels) for every polygon in a label file."""
    w, h = record.intrinsics.width, record.intrinsics.height
    labels = read_label_file(label_path or record.label_path, w, h, with_confidence)
    masks = [rasterize_polygon(lab.pixel_vertices(w, h), w, h) for lab in labels]
    return labels, masks
