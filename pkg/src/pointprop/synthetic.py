"""Synthetic KITTI-layout frames for demos, benchmarks and end-to-end tests.

Scenes come from :func:`pointprop.evaluation.generate_scene`. Each frame is
written as a velodyne ``.bin`` (KITTI axes: x forward, y left, z up), a calib
file, ``label_2`` rows and a mask whose foreground pixels are the pixels hit
by object points.
"""
from dataclasses import replace
import math
from pathlib import Path

import numpy as np

from .evaluation import SceneSpec, generate_scene
from .geometry import box_corners
from .kitti_io import (
    CAMERA, Calibration, GroundTruthLabel, MaskImage, PointCloud, format_calibration,
    format_label, format_pgm, project_to_image, serialize_point_cloud,
)

IMAGE_SIZE = (2048, 1024)
# velodyne (forward, left, up) -> camera (right, down, forward)
VELO_TO_CAM = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
FRAME_SPEC = SceneSpec(x_range=(-20.0, 20.0), z_range=(15.0, 40.0), n_objects=(4, 8))


def synthetic_calibration(focal=700.0, cx=1024.0, cy=300.0):
    p2 = np.array([[focal, 0, cx, 0], [0, focal, cy, 0], [0, 0, 1, 0]], dtype=float)
    return Calibration(p2, np.eye(3), np.hstack([VELO_TO_CAM, np.zeros((3, 1))]))


def _label(box, calib, cls="Car"):
    cam = PointCloud(np.hstack([box_corners(box), np.zeros((8, 1))]), CAMERA)
    uv, _ = project_to_image(cam, calib)
    w, h = IMAGE_SIZE
    u = np.clip(uv[:, 0], 0, w - 1)
    v = np.clip(uv[:, 1], 0, h - 1)
    alpha = box.yaw - math.atan2(box.center[0], box.center[2])
    return GroundTruthLabel(cls, box, 0.0, 0, math.atan2(math.sin(alpha), math.cos(alpha)),
                            (float(u.min()), float(v.min()), float(u.max()), float(v.max())))


def synthetic_frame(spec=FRAME_SPEC, calib=None, cls="Car"):
    """``(velodyne cloud, calibration, labels, mask)`` for one scene."""
    calib = calib or synthetic_calibration()
    cam, boxes = generate_scene(spec)
    rng = np.random.default_rng([spec.seed, 7])
    w, h = IMAGE_SIZE
    uv, valid = project_to_image(cam, calib, IMAGE_SIZE)
    pixels = np.zeros((h, w), np.uint8)
    fg = valid & (cam.scores >= 0.5)
    pixels[np.floor(uv[fg, 1]).astype(int), np.floor(uv[fg, 0]).astype(int)] = 255
    velo = np.hstack([cam.xyz @ VELO_TO_CAM, rng.uniform(0, 1, (len(cam), 1))])
    cloud = PointCloud(velo.astype(np.float32).astype(np.float64))
    labels = [_label(b, calib, cls) for b in boxes]
    return cloud, calib, labels, MaskImage(pixels)


def write_frame(root, frame_id, cloud, calib, labels, mask):
    root = Path(root)
    for sub in ("velodyne", "calib", "label_2", "masks"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    (root / "velodyne" / f"{frame_id}.bin").write_bytes(serialize_point_cloud(cloud))
    (root / "calib" / f"{frame_id}.txt").write_text(format_calibration(calib))
    (root / "label_2" / f"{frame_id}.txt").write_text(
        "".join(format_label(lab) + "\n" for lab in labels))
    (root / "masks" / f"{frame_id}.pgm").write_bytes(format_pgm(mask))


def write_dataset(root, n_frames, seed=0, spec=FRAME_SPEC):
    """Write ``n_frames`` synthetic frames with ids 000000, 000001, ..."""
    ids = []
    for i in range(n_frames):
        fid = f"{i:06d}"
        write_frame(root, fid, *synthetic_frame(replace(spec, seed=seed * 100_003 + i)))
        ids.append(fid)
    return ids
