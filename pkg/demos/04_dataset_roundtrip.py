"""
Writing and reading a dataset
=============================

A synthetic set written in the on-disk layout (16-bit depth PNGs, polygon
label files, intrinsics and a manifest) and read back for measurement.
"""

import tempfile
from pathlib import Path

from pothole_rgbd.dataset_io import load_depth_frame, load_instance_masks, load_manifest
from pothole_rgbd.geometry import measure_frame
from pothole_rgbd.synth import circle_scene, write_scene_dataset

root = Path(tempfile.mkdtemp())
manifest = write_scene_dataset(root, [circle_scene(r) for r in (25, 60)], depth_unit=0.5)
print(manifest.read_text())
print((root / "intrinsics.txt").read_text())
print((root / "labels" / "scene_0000.txt").read_text()[:80], "...")

# %%
# Label polygons are 64-gons inscribed in each outline, so the masks read
# back from them are a little smaller than the exact footprints.
for record in load_manifest(manifest):
    frame = load_depth_frame(record.depth_path, record.intrinsics)
    labels, masks = load_instance_masks(record)
    (m,) = measure_frame(frame, masks, record.intrinsics.camera)
    print(f"{record.frame_id}: {m.pixel_area} px, depth {m.depth_mm:.1f} mm, perimeter {m.perimeter_mm:.1f} mm")
