"""Synthetic RGB-D road scenes with analytically known potholes.

A scene is a flat road at ``plane_depth_mm`` from the camera with elliptic
depressions cut into it. The camera jitter term shifts every depth value,
which is what a bouncing vehicle-mounted camera would see.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw

from .dataset_io import (IntrinsicsFile, PolygonLabel, save_depth_png, write_intrinsics,
                         write_label_file, write_manifest)
from .errors import ValidationError
from .geometry import CameraIntrinsics, DepthFrame

PROFILES = ("flat-bottom", "spherical-cap")


@dataclass
class PotholeSpec:
    center: Tuple[float, float]            # (x, y) in pixels
    radii: Tuple[float, float]             # (a, b) semi-axes in pixels along x and y
    depression_mm: float
    profile: str = "flat-bottom"

    def __post_init__(self):
        if np.isscalar(self.radii):
            self.radii = (float(self.radii), float(self.radii))
        if self.profile not in PROFILES:
            raise ValidationError(f"profile must be one of {PROFILES}, got {self.profile!r}")
        if min(self.radii) < 2:
            raise ValidationError(f"radii must be at least 2 px, got {self.radii}")
        if self.depression_mm < 0:
            raise ValidationError("depression must be nonnegative")


@dataclass
class SceneSpec:
    width: int = 640
    height: int = 480
    plane_depth_mm: float = 800.0
    potholes: List[PotholeSpec] = field(default_factory=list)
    noise_sigma_mm: float = 0.0
    camera_jitter_mm: float = 0.0
    rng_seed: int = 0
    fx: float = 640.0
    fy: float = 640.0

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.width / 2, self.height / 2, self.width, self.height)


@dataclass
class PotholeTruth:
    perimeter_mm: float
    depth_mm: float
    mask: np.ndarray


@dataclass
class SceneTruth:
    potholes: List[PotholeTruth]
    scales: Tuple[float, float]
    plane_depth_mm: float


def ellipse_perimeter_reference(a_mm: float, b_mm: float) -> float:
    """Ramanujan's second approximation to the perimeter of an ellipse."""
    if not (a_mm > 0 and b_mm > 0):
        raise ValidationError("semi-axes must be positive")
    h = ((a_mm - b_mm) / (a_mm + b_mm)) ** 2
    return math.pi * (a_mm + b_mm) * (1 + 3 * h / (10 + math.sqrt(4 - 3 * h)))


def _footprint(spec: SceneSpec, hole: PotholeSpec):
    """Normalized squared radius at every pixel center and the membership mask."""
    ys, xs = np.mgrid[0:spec.height, 0:spec.width]
    cx, cy = hole.center
    a, b = hole.radii
    rho2 = ((xs + 0.5 - cx) / a) ** 2 + ((ys + 0.5 - cy) / b) ** 2
    return rho2, rho2 <= 1.0


def _depression(hole: PotholeSpec, rho2: np.ndarray, inside: np.ndarray, scale: float) -> np.ndarray:
    if hole.profile == "flat-bottom":
        return np.where(inside, hole.depression_mm, 0.0)
    # spherical cap through the rim with its deepest point at the center;
    # the rim radius is taken along the mean semi-axis in millimeters
    r_mm = 0.5 * (hole.radii[0] + hole.radii[1]) * scale
    d = hole.depression_mm
    if d == 0:
        return np.zeros_like(rho2)
    sphere_r = (r_mm ** 2 + d ** 2) / (2 * d)
    rho_mm = np.sqrt(np.minimum(rho2, 1.0)) * r_mm
    cap = np.sqrt(np.maximum(sphere_r ** 2 - rho_mm ** 2, 0.0)) - (sphere_r - d)
    return np.where(inside, np.maximum(cap, 0.0), 0.0)


def generate_scene(spec: SceneSpec) -> Tuple[DepthFrame, List[np.ndarray], SceneTruth]:
    """Render depth, exact footprint masks and analytic truth for ``spec``."""
    if spec.width < 1 or spec.height < 1:
        raise ValidationError("scene size must be positive")
    if spec.plane_depth_mm + spec.camera_jitter_mm <= 0:
        raise ValidationError("road plane must lie in front of the camera")
    if spec.noise_sigma_mm < 0:
        raise ValidationError("noise sigma must be nonnegative")

    plane = spec.plane_depth_mm + spec.camera_jitter_mm
    s_x, s_y = plane / spec.fx, plane / spec.fy
    depth = np.full((spec.height, spec.width), plane)
    occupied = np.zeros((spec.height, spec.width), dtype=bool)
    masks, truths = [], []
    for i, hole in enumerate(spec.potholes):
        cx, cy = hole.center
        a, b = hole.radii
        if cx - a < 0 or cx + a > spec.width or cy - b < 0 or cy + b > spec.height:
            raise ValidationError(f"pothole {i} extends outside the frame")
        rho2, inside = _footprint(spec, hole)
        if (occupied & inside).any():
            raise ValidationError(f"pothole {i} overlaps an earlier pothole")
        occupied |= inside
        depth += _depression(hole, rho2, inside, 0.5 * (s_x + s_y))
        masks.append(inside)
        truths.append(PotholeTruth(
            perimeter_mm=ellipse_perimeter_reference(a * s_x, b * s_y),
            depth_mm=hole.depression_mm,
            mask=inside.copy(),
        ))

    if spec.noise_sigma_mm > 0:
        rng = np.random.default_rng(spec.rng_seed)
        depth = depth + rng.normal(0.0, spec.noise_sigma_mm, size=depth.shape)
    frame = DepthFrame(depth, np.ones_like(occupied))
    return frame, masks, SceneTruth(truths, (s_x, s_y), plane)


def circle_scene(radius: float, plane_depth_mm: float = 800.0, depression_mm: float = 50.0,
                 profile: str = "flat-bottom", **kwargs) -> SceneSpec:
    """Single pothole centered in a 640x480 frame."""
    spec = SceneSpec(plane_depth_mm=plane_depth_mm, **kwargs)
    spec.potholes = [PotholeSpec((spec.width / 2, spec.height / 2), (radius, radius), depression_mm, profile)]
    return spec


def polygon_vertices(hole: PotholeSpec, n: int = 64) -> List[Tuple[float, float]]:
    """Pixel-space polygon inscribed in the pothole outline."""
    t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    cx, cy = hole.center
    a, b = hole.radii
    return list(zip((cx + a * np.cos(t)).tolist(), (cy + b * np.sin(t)).tolist()))


def render_rgb(spec: SceneSpec, masks: Sequence[np.ndarray]) -> np.ndarray:
    """Flat gray image with pothole outlines drawn in red."""
    img = Image.new("RGB", (spec.width, spec.height), (128, 128, 128))
    draw = ImageDraw.Draw(img)
    for hole in spec.potholes:
        draw.polygon(polygon_vertices(hole), outline=(255, 0, 0))
    return np.asarray(img)


def write_scene_dataset(out_dir, specs: Sequence[SceneSpec], depth_unit: float = 1.0,
                        names: Optional[Sequence[str]] = None) -> Path:
    """Write scenes in the dataset layout and return the manifest path.

    All scenes must share size and focal lengths (one intrinsics file).
    """
    out_dir = Path(out_dir)
    for sub in ("rgb", "depth", "labels"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    if not specs:
        write_manifest(out_dir / "manifest.txt", "intrinsics.txt", [])
        write_intrinsics(out_dir / "intrinsics.txt", IntrinsicsFile(640.0, 640.0, 320.0, 240.0, 640, 480, depth_unit))
        return out_dir / "manifest.txt"
    first = specs[0]
    for s in specs:
        if (s.width, s.height, s.fx, s.fy) != (first.width, first.height, first.fx, first.fy):
            raise ValidationError("all scenes in one dataset must share size and focal lengths")
    cam = first.intrinsics
    write_intrinsics(out_dir / "intrinsics.txt",
                     IntrinsicsFile(cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height, depth_unit))
    rows = []
    for i, spec in enumerate(specs):
        name = names[i] if names else f"scene_{i:04d}"
        frame, masks, _ = generate_scene(spec)
        save_depth_png(out_dir / "depth" / f"{name}.png", frame.depth_mm, depth_unit)
        Image.fromarray(render_rgb(spec, masks)).save(out_dir / "rgb" / f"{name}.png")
        labels = []
        for hole in spec.potholes:
            verts = [(min(max(x / spec.width, 0.0), 1.0), min(max(y / spec.height, 0.0), 1.0))
                     for x, y in polygon_vertices(hole)]
            labels.append(PolygonLabel(0, verts))
        write_label_file(out_dir / "labels" / f"{name}.txt", labels)
        rows.append((f"rgb/{name}.png", f"depth/{name}.png", f"labels/{name}.txt"))
    write_manifest(out_dir / "manifest.txt", "intrinsics.txt", rows)
    return out_dir / "manifest.txt"
