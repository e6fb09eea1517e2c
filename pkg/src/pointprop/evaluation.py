"""Recall and average precision, plus a synthetic scene generator.

AP uses greedy matching in descending score order with interpolated
precision sampled at 11 recall points (0, 0.1, ..., 1) or, optionally, the
40-point variant (1/40, ..., 1).
"""
from dataclasses import dataclass
import math

import numpy as np

from ._validation import as_box_array
from .errors import PlacementError
from .geometry import (
    Box3D, bev_intersection_matrix, bev_iou_matrix, iou_3d_matrix, points_in_box,
    points_iou_matrix,
)
from .kitti_io import CAMERA, PointCloud
from .proposal import CAR_SIZE, ProposalSet

# KITTI difficulty tiers: (min 2D box height px, max occlusion, max truncation)
TIERS = {
    "easy": (40.0, 0, 0.15),
    "moderate": (25.0, 1, 0.30),
    "hard": (25.0, 2, 0.50),
}

CRITERIA = ("points_iou", "box_iou_3d", "box_iou_bev")


@dataclass(frozen=True)
class Detection:
    box: Box3D
    score: float
    cls: str = "Car"

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")


def _boxes_of(items):
    if isinstance(items, ProposalSet):
        return items.boxes
    if isinstance(items, np.ndarray):
        return as_box_array(items)
    return as_box_array([getattr(it, "box", it) for it in items])


def overlap_matrix(boxes_a, boxes_b, criterion, cloud=None):
    if criterion == "points_iou":
        if cloud is None:
            raise ValueError("points_iou needs a point cloud")
        return points_iou_matrix(cloud, boxes_a, boxes_b)
    if criterion == "box_iou_3d":
        return iou_3d_matrix(boxes_a, boxes_b)
    if criterion == "box_iou_bev":
        return bev_iou_matrix(boxes_a, boxes_b)
    raise ValueError(f"unknown criterion {criterion!r}; choose from {CRITERIA}")


def compute_recall(proposals, gts, cloud=None, criterion="points_iou", threshold=0.5):
    """Fraction of ground truths overlapped (>= threshold) by any proposal.

    With no ground truths the recall is 1.0.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    g = _boxes_of(gts)
    if len(g) == 0:
        return 1.0
    p = _boxes_of(proposals)
    if len(p) == 0:
        return 0.0
    ov = overlap_matrix(p, g, criterion, cloud)
    return float(np.mean(ov.max(axis=0) >= threshold))


# -- average precision ----------------------------------------------------------


def match_detections(boxes, scores, gt_boxes, iou_thresh, iou_kind="3d", gt_ignore=None):
    """Greedy matching for one frame.

    Returns ``(scores, is_tp)`` for detections that count; a detection whose
    best ground truth is an ignored one (and overlaps it enough) is dropped.
    """
    boxes = as_box_array(boxes)
    scores = np.asarray(scores, dtype=np.float64)
    gt = as_box_array(gt_boxes)
    ignore = np.zeros(len(gt), bool) if gt_ignore is None else np.asarray(gt_ignore, bool)
    if len(boxes) == 0:
        return scores, np.zeros(0, bool)
    if len(gt) == 0:
        return scores, np.zeros(len(boxes), bool)
    ious = iou_3d_matrix(boxes, gt) if iou_kind == "3d" else bev_iou_matrix(boxes, gt)
    order = np.argsort(-scores, kind="stable")
    taken = np.zeros(len(gt), bool)
    kept_scores, tp = [], []
    for i in order:
        j = int(np.argmax(ious[i]))
        if ious[i, j] >= iou_thresh:
            if ignore[j]:
                continue
            if not taken[j]:
                taken[j] = True
                kept_scores.append(scores[i])
                tp.append(True)
                continue
        kept_scores.append(scores[i])
        tp.append(False)
    return np.array(kept_scores), np.array(tp, bool)


def average_precision(scores, is_tp, n_gt, num_points=11):
    """Interpolated AP from pooled detection outcomes."""
    scores = np.asarray(scores, dtype=np.float64)
    is_tp = np.asarray(is_tp, bool)
    if n_gt == 0:
        return 1.0 if len(scores) == 0 else 0.0
    if len(scores) == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(is_tp[order])
    fp = np.cumsum(~is_tp[order])
    recall = tp / n_gt
    precision = tp / (tp + fp)
    if num_points == 11:
        samples = np.arange(11) / 10.0
    elif num_points == 40:
        samples = np.arange(1, 41) / 40.0
    else:
        raise ValueError("num_points must be 11 or 40")
    total = 0.0
    for r in samples:
        hit = recall >= r - 1e-12
        total += precision[hit].max() if hit.any() else 0.0
    return total / len(samples)


def compute_ap(detections, gts, iou_thresh=0.7, iou_kind="3d", num_points=11):
    """AP for one frame of detections against ground-truth boxes."""
    boxes = _boxes_of(detections)
    scores = [d.score for d in detections]
    gt = _boxes_of(gts)
    s, tp = match_detections(boxes, scores, gt, iou_thresh, iou_kind)
    return average_precision(s, tp, len(gt), num_points)


def in_tier(label, tier):
    if tier is None or tier == "all":
        return True
    min_h, max_occ, max_trunc = TIERS[tier]
    return (label.bbox_height >= min_h and label.occlusion <= max_occ
            and label.truncation <= max_trunc)


def evaluate_frames(frames, cls, iou_thresh, iou_kind="3d", tier=None, num_points=11):
    """Pooled AP over ``frames`` of ``(detections, labels)``.

    Labels of other classes or DontCare are dropped; labels of ``cls`` outside
    ``tier`` are ignored (their matches count neither way).
    """
    all_scores, all_tp, n_gt = [], [], 0
    for dets, labels in frames:
        dets = [d for d in dets if d.cls == cls]
        care = [lab for lab in labels if lab.matchable and lab.cls == cls]
        ignore = np.array([not in_tier(lab, tier) for lab in care], bool)
        n_gt += int(np.count_nonzero(~ignore))
        s, tp = match_detections(_boxes_of(dets), [d.score for d in dets],
                                 _boxes_of([lab.box for lab in care]), iou_thresh, iou_kind,
                                 ignore)
        all_scores.append(s)
        all_tp.append(tp)
    scores = np.concatenate(all_scores) if all_scores else np.zeros(0)
    tps = np.concatenate(all_tp) if all_tp else np.zeros(0, bool)
    return average_precision(scores, tps, n_gt, num_points)


# -- synthetic scenes -------------------------------------------------------------


@dataclass(frozen=True)
class SceneSpec:
    n_objects: tuple = (10, 10)
    anchor_size: tuple = CAR_SIZE
    size_jitter: float = 0.1
    x_range: tuple = (-25.0, 25.0)
    z_range: tuple = (5.0, 60.0)
    ground_y: float = 1.65
    points_per_object: tuple = (300, 1200)
    background_points: int = 4000
    background_y: tuple = (-1.0, 1.7)
    noise_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        for name in ("n_objects", "x_range", "z_range", "points_per_object", "background_y"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered, got {(lo, hi)}")
        if self.n_objects[0] < 0 or self.points_per_object[0] < 0 or self.background_points < 0:
            raise ValueError("counts must be non-negative")
        if not 0.0 <= self.size_jitter < 1.0 or self.noise_std < 0:
            raise ValueError("size_jitter must lie in [0, 1) and noise_std be >= 0")


def _place_boxes(spec, rng):
    n = int(rng.integers(spec.n_objects[0], spec.n_objects[1] + 1))
    boxes = []
    for _ in range(n):
        for _attempt in range(1000):
            size = np.asarray(spec.anchor_size) * (1 + rng.uniform(-spec.size_jitter,
                                                                    spec.size_jitter, 3))
            x = rng.uniform(*spec.x_range)
            z = rng.uniform(*spec.z_range)
            yaw = rng.uniform(-math.pi, math.pi)
            box = Box3D((x, spec.ground_y - size[1] / 2, z), size, yaw)
            if not boxes or bev_intersection_matrix([box], boxes).max() <= 0.0:
                boxes.append(box)
                break
        else:
            raise PlacementError(f"could not place object {len(boxes)} after 1000 attempts")
    return boxes


def generate_scene(spec=SceneSpec()):
    """Camera-frame cloud with perfect foreground scores, plus its boxes.

    Object points are uniform inside their box, jittered by Gaussian noise and
    clamped back inside; background points are uniform in the placement
    bounds and never fall inside an object.
    """
    rng = np.random.default_rng(spec.seed)
    boxes = _place_boxes(spec, rng)
    parts = []
    for box in boxes:
        m = int(rng.integers(spec.points_per_object[0], spec.points_per_object[1] + 1))
        half = np.asarray(box.size) / 2
        local = rng.uniform(-half, half, (m, 3)) + rng.normal(0.0, spec.noise_std, (m, 3))
        local = np.clip(local, -half * (1 - 1e-6), half * (1 - 1e-6))
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
        parts.append(local @ rot.T + np.asarray(box.center))
    fg = np.concatenate(parts) if parts else np.zeros((0, 3))

    bg = np.zeros((0, 3))
    lo = np.array([spec.x_range[0], spec.background_y[0], spec.z_range[0]])
    hi = np.array([spec.x_range[1], spec.background_y[1], spec.z_range[1]])
    while len(bg) < spec.background_points:
        cand = rng.uniform(lo, hi, (spec.background_points - len(bg), 3))
        if boxes:
            inside = np.zeros(len(cand), bool)
            # reject with a margin so background never touches an object
            for box in boxes:
                grown = Box3D(box.center, np.asarray(box.size) + 1e-3, box.yaw)
                inside |= points_in_box(cand, grown)
            cand = cand[~inside]
        bg = np.vstack([bg, cand])
    xyz = np.vstack([fg, bg])
    refl = rng.uniform(0.0, 1.0, len(xyz))
    scores = np.concatenate([np.ones(len(fg)), np.zeros(len(bg))])
    cloud = PointCloud(np.column_stack([xyz, refl]), CAMERA, scores)
    return cloud, boxes
