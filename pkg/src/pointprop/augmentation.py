"""Point-cloud augmentations that move points and ground-truth boxes together.

All functions take a camera-frame :class:`PointCloud` and a list of
:class:`Box3D` and return new ones; inputs are never modified.
"""
from dataclasses import dataclass
import math

import numpy as np

from .errors import FrameError
from .geometry import Box3D, bev_intersection_matrix, points_in_box, rotation_y
from .kitti_io import CAMERA

AUGMENTATIONS = ("perturb_objects", "flip_x", "global_rotate", "global_scale")
MAX_PERTURB_TRIES = 10


@dataclass(frozen=True)
class AugmentationConfig:
    per_box_rot_range: tuple = (-math.pi / 3, math.pi / 3)
    per_box_translation_std: float = 0.25
    flip_prob: float = 0.5
    global_rot_range: tuple = (-math.pi / 4, math.pi / 4)
    scale_range: tuple = (0.9, 1.1)
    seed: int = 0

    def __post_init__(self):
        for name in ("per_box_rot_range", "global_rot_range", "scale_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered, got {(lo, hi)}")
        if self.scale_range[0] <= 0:
            raise ValueError("scale factors must be positive")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must lie in [0, 1]")
        if self.per_box_translation_std < 0:
            raise ValueError("per_box_translation_std must be non-negative")


def _check_frame(cloud):
    if cloud.frame != CAMERA:
        raise FrameError("augmentations operate on camera-frame clouds")


def _uniform(rng, bounds):
    lo, hi = bounds
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def perturb_objects(cloud, gts, config=AugmentationConfig(), rng=None):
    """Rotate and translate each box together with its interior points.

    Rotation is about the box's own vertical axis; translation is Gaussian per
    axis. A draw whose moved box would overlap another box in BEV is redrawn,
    and after ``MAX_PERTURB_TRIES`` failures that box stays put. A point inside
    several boxes moves with the first one.
    """
    _check_frame(cloud)
    rng = np.random.default_rng(rng)
    xyz = np.array(cloud.xyz)
    claimed = np.zeros(len(xyz), bool)
    owned = []
    for box in gts:
        mask = points_in_box(xyz, box) & ~claimed
        claimed |= mask
        owned.append(mask)
    out = list(gts)
    for i, box in enumerate(gts):
        others = out[:i] + out[i + 1:]
        for _ in range(MAX_PERTURB_TRIES):
            dtheta = _uniform(rng, config.per_box_rot_range)
            shift = rng.normal(0.0, config.per_box_translation_std, 3) \
                if config.per_box_translation_std > 0 else np.zeros(3)
            moved = Box3D(np.asarray(box.center) + shift, box.size, box.yaw + dtheta)
            if not others or bev_intersection_matrix([moved], others).max() <= 0.0:
                break
        else:
            continue
        center = np.asarray(box.center)
        rel = xyz[owned[i]] - center
        xyz[owned[i]] = rel @ rotation_y(dtheta).T + center + shift
        out[i] = moved
    return cloud.with_xyz(xyz), out


def flip_x(cloud, gts, rng=None, prob=0.5):
    """Mirror x with probability ``prob``; headings become ``pi - yaw``."""
    _check_frame(cloud)
    rng = np.random.default_rng(rng)
    if rng.random() >= prob:
        return cloud, list(gts)
    xyz = np.array(cloud.xyz)
    xyz[:, 0] = -xyz[:, 0]
    boxes = [Box3D((-b.center[0], b.center[1], b.center[2]), b.size, math.pi - b.yaw)
             for b in gts]
    return cloud.with_xyz(xyz), boxes


def rotate_scene(cloud, gts, angle):
    r = rotation_y(angle)
    boxes = [Box3D(r @ np.asarray(b.center), b.size, b.yaw + angle) for b in gts]
    return cloud.with_xyz(cloud.xyz @ r.T), boxes


def global_rotate(cloud, gts, rng=None, rot_range=(-math.pi / 4, math.pi / 4)):
    """Rotate the whole scene about the camera's vertical axis."""
    _check_frame(cloud)
    rng = np.random.default_rng(rng)
    return rotate_scene(cloud, gts, _uniform(rng, rot_range))


def scale_scene(cloud, gts, s):
    boxes = [Box3D(np.asarray(b.center) * s, np.asarray(b.size) * s, b.yaw) for b in gts]
    return cloud.with_xyz(cloud.xyz * s), boxes


def global_scale(cloud, gts, rng=None, scale_range=(0.9, 1.1)):
    _check_frame(cloud)
    rng = np.random.default_rng(rng)
    return scale_scene(cloud, gts, _uniform(rng, scale_range))


def augment_one(cloud, gts, config=AugmentationConfig(), rng=None, return_choice=False):
    """Apply one of the four augmentations, chosen uniformly."""
    rng = np.random.default_rng(config.seed if rng is None else rng)
    choice = AUGMENTATIONS[int(rng.integers(len(AUGMENTATIONS)))]
    if choice == "perturb_objects":
        result = perturb_objects(cloud, gts, config, rng)
    elif choice == "flip_x":
        result = flip_x(cloud, gts, rng, config.flip_prob)
    elif choice == "global_rotate":
        result = global_rotate(cloud, gts, rng, config.global_rot_range)
    else:
        result = global_scale(cloud, gts, rng, config.scale_range)
    if return_choice:
        return (*result, choice)
    return result
