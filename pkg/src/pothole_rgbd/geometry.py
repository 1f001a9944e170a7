"""Physical pothole measurements from a depth frame and instance masks.

Depth values are distances from the camera in millimeters, so a pothole
reads *deeper* than the surrounding road: ``depth = h_p - h_c`` is positive,
where ``h_c`` is the median depth of the road outside every pothole mask and
``h_p`` a high percentile of the depths inside one mask.

Masks are boolean ``(H, W)`` arrays indexed ``[row, col]``; boundary points
are ``(x, y) = (col, row)`` tuples.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .errors import NoDepthError, NoGroundPlaneError, ValidationError

Statistic = Union[str, float]

# Moore neighborhood in clockwise order (image y axis points down),
# starting from the west neighbor.
_MOORE = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))


@dataclass
class DepthFrame:
    depth_mm: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        self.depth_mm = np.asarray(self.depth_mm, dtype=np.float64)
        if self.depth_mm.ndim != 2:
            raise ValidationError(f"depth map must be 2-D, got shape {self.depth_mm.shape}")
        if self.valid is None:
            self.valid = np.isfinite(self.depth_mm) & (self.depth_mm > 0)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.depth_mm.shape:
                raise ValidationError("validity mask and depth map differ in shape")
        if np.any(~np.isfinite(self.depth_mm[self.valid])) or np.any(self.depth_mm[self.valid] < 0):
            raise ValidationError("valid depth values must be finite and nonnegative")

    @property
    def height(self) -> int:
        return self.depth_mm.shape[0]

    @property
    def width(self) -> int:
        return self.depth_mm.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.depth_mm.shape


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValidationError("image size must be positive")


@dataclass
class BoundaryChain:
    """Ordered 8-connected boundary pixels ``(x, y)`` of one component."""

    points: List[Tuple[int, int]]
    closed: bool = True

    def __len__(self):
        return len(self.points)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.int64).reshape(-1, 2)


@dataclass
class PotholeMeasurement:
    perimeter_mm: float
    depth_mm: float
    h_p_mm: float
    h_c_mm: float
    pixel_area: int
    scales: Tuple[float, float]
    components: int = 1
    degenerate: bool = False
    flags: List[str] = field(default_factory=list)


def _as_mask(mask, shape=None) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ValidationError(f"mask must be 2-D, got shape {m.shape}")
    if shape is not None and m.shape != tuple(shape):
        raise ValidationError(f"mask shape {m.shape} does not match frame shape {tuple(shape)}")
    return m


# ---------------------------------------------------------------------------
# Heights
# ---------------------------------------------------------------------------

def ground_plane_height(frame: DepthFrame, exclusions: Sequence[np.ndarray] = ()) -> float:
    """Median depth of valid pixels outside every exclusion mask."""
    eligible = frame.valid.copy()
    for mask in exclusions:
        eligible &= ~_as_mask(mask, frame.shape)
    if not eligible.any():
        raise NoGroundPlaneError("no valid depth pixel outside the pothole masks")
    return float(np.median(frame.depth_mm[eligible]))


def _parse_statistic(statistic: Statistic):
    if isinstance(statistic, str):
        s = statistic.lower()
        if s == "max":
            return "max"
        if s.startswith("p"):
            s = s[1:]
        try:
            statistic = float(s)
        except ValueError:
            raise ValidationError(f"unknown depth statistic {statistic!r}") from None
    q = float(statistic)
    if not 0.0 <= q <= 100.0:
        raise ValidationError(f"percentile must lie in [0, 100], got {q}")
    return q


def pothole_height(frame: DepthFrame, mask, statistic: Statistic = 95.0) -> float:
    """``h_p``: the chosen statistic (``"max"`` or a percentile) of in-mask depths."""
    m = _as_mask(mask, frame.shape) & frame.valid
    if not m.any():
        raise NoDepthError("mask covers no valid depth pixel")
    values = frame.depth_mm[m]
    stat = _parse_statistic(statistic)
    if stat == "max":
        return float(values.max())
    return float(np.percentile(values, stat))


def pothole_depth(frame: DepthFrame, mask, h_c: float, statistic: Statistic = 95.0) -> float:
    """Pothole depth ``h_p - h_c`` in millimeters."""
    return pothole_height(frame, mask, statistic) - float(h_c)


# ---------------------------------------------------------------------------
# Boundary tracing
# ---------------------------------------------------------------------------

def _moore_trace(component: np.ndarray, start: Tuple[int, int]) -> List[Tuple[int, int]]:
    h, w = component.shape

    def inside(x, y):
        return 0 <= x < w and 0 <= y < h and component[y, x]

    def step(cur, back_dir):
        # scan clockwise starting just after the backtrack direction
        cx, cy = cur
        for k in range(1, 9):
            d = (back_dir + k) % 8
            nx, ny = cx + _MOORE[d][0], cy + _MOORE[d][1]
            if inside(nx, ny):
                # new backtrack: the (background) neighbor examined just before,
                # expressed as a direction seen from the new pixel
                px, py = cx + _MOORE[(d - 1) % 8][0], cy + _MOORE[(d - 1) % 8][1]
                return (nx, ny), _MOORE.index((px - nx, py - ny))
        return None, None

    chain = [start]
    nxt, back = step(start, 0)  # start is raster-first, so its west neighbor is background
    if nxt is None:
        return chain
    second = nxt
    cur = start
    while True:
        chain.append(nxt)
        cur = nxt
        nxt, back = step(cur, back)
        if cur == start and nxt == second:
            break
    chain.pop()  # trailing repeat of the start pixel
    return chain


def trace_boundary(mask) -> List[BoundaryChain]:
    """Moore-neighbor trace of the outer boundary of each 8-connected component.

    Chains run clockwise (on screen) from each component's top-most, then
    left-most pixel. Components are ordered by that start pixel in raster
    order.
    """
    m = _as_mask(mask)
    labels, count = ndimage.label(m, structure=np.ones((3, 3), dtype=int))
    if count == 0:
        return []
    chains = []
    slices = ndimage.find_objects(labels)
    starts = []
    for idx, sl in enumerate(slices, start=1):
        sub = labels[sl] == idx
        rows, cols = np.nonzero(sub)
        # np.nonzero is raster ordered, so element 0 is top-most then left-most
        starts.append((int(rows[0]) + sl[0].start, int(cols[0]) + sl[1].start, idx, sl))
    for row, col, idx, sl in sorted(starts):
        sub = labels[sl] == idx
        local = _moore_trace(sub, (col - sl[1].start, row - sl[0].start))
        points = [(x + sl[1].start, y + sl[0].start) for x, y in local]
        chains.append(BoundaryChain(points, closed=True))
    return chains


# ---------------------------------------------------------------------------
# Metric conversion
# ---------------------------------------------------------------------------

def pixel_scales(intrinsics: CameraIntrinsics, reference_depth_mm: float) -> Tuple[float, float]:
    """Millimeters per pixel at ``reference_depth_mm`` under the pinhole model."""
    if not reference_depth_mm > 0:
        raise ValidationError(f"reference depth must be positive, got {reference_depth_mm}")
    return reference_depth_mm / intrinsics.fx, reference_depth_mm / intrinsics.fy


def boundary_perimeter(chain, s_x: float, s_y: float, mode: str = "closed") -> float:
    """Sum of metric distances between consecutive chain points.

    ``mode="open"`` sums the ``n - 1`` segments of the polyline only;
    ``"closed"`` adds the segment from the last point back to the first.
    """
    if mode not in ("closed", "open"):
        raise ValidationError(f"perimeter mode must be 'closed' or 'open', got {mode!r}")
    pts = chain.as_array() if isinstance(chain, BoundaryChain) else np.asarray(chain, dtype=np.int64).reshape(-1, 2)
    if len(pts) < 2:
        return 0.0
    if mode == "closed":
        pts = np.vstack([pts, pts[:1]])
    steps = np.diff(pts, axis=0).astype(np.float64)
    return float(np.sum(np.hypot(steps[:, 0] * s_x, steps[:, 1] * s_y)))


# ---------------------------------------------------------------------------
# Full frame
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeasureOptions:
    statistic: Statistic = 95.0
    perimeter_mode: str = "closed"


def measure_frame(frame: DepthFrame, masks: Sequence[np.ndarray], intrinsics: CameraIntrinsics,
                  options: MeasureOptions = MeasureOptions()) -> List[PotholeMeasurement]:
    """Perimeter and depth for every mask, in input order."""
    masks = [_as_mask(m, frame.shape) for m in masks]
    if not masks:
        return []
    h_c = ground_plane_height(frame, masks)
    s_x, s_y = pixel_scales(intrinsics, h_c)

    results = []
    for i, mask in enumerate(masks):
        try:
            h_p = pothole_height(frame, mask, options.statistic)
        except NoDepthError as exc:
            raise NoDepthError(f"mask {i}: {exc}", mask_index=i) from None
        chains = trace_boundary(mask)
        outline = max(chains, key=lambda c: (boundary_perimeter(c, s_x, s_y, options.perimeter_mode)))
        depth = h_p - h_c
        flags = []
        if depth < 0:
            flags.append("shallower-than-plane")
        if len(chains) > 1:
            flags.append("multiple-components")
        results.append(PotholeMeasurement(
            perimeter_mm=boundary_perimeter(outline, s_x, s_y, options.perimeter_mode),
            depth_mm=depth,
            h_p_mm=h_p,
            h_c_mm=h_c,
            pixel_area=int(mask.sum()),
            scales=(s_x, s_y),
            components=len(chains),
            degenerate=depth < 0,
            flags=flags,
        ))
    return results
