"""PointsIoU target assignment and positive/negative minibatch sampling."""
from dataclasses import dataclass

import numpy as np

from ._validation import as_box_array
from .errors import InsufficientProposalsError
from .geometry import points_iou_matrix
from .proposal import ProposalSet

POSITIVE = 1
NEGATIVE = 0
IGNORED = -1

CAR_THRESHOLDS = (0.55, 0.55)
PED_CYC_THRESHOLDS = (0.5, 0.5)


@dataclass(frozen=True)
class TargetAssignment:
    proposal_index: int
    label: int
    matched_gt: int = None
    points_iou: float = 0.0

    @property
    def is_positive(self):
        return self.label == POSITIVE


def _gt_boxes(gts):
    """Boxes of matchable ground truths and their positions in ``gts``."""
    keep, boxes = [], []
    for i, g in enumerate(gts):
        if getattr(g, "matchable", True) is False:
            continue
        keep.append(i)
        boxes.append(getattr(g, "box", g))
    return as_box_array(boxes), np.array(keep, dtype=np.int64)


def label_points_iou(max_iou, pos_thresh, neg_thresh):
    """Label from the best PointsIoU.

    Positive strictly above ``pos_thresh``, negative strictly below
    ``neg_thresh``. In between: negative when the thresholds coincide (so an
    IoU exactly at a shared threshold is negative), ignored otherwise.
    """
    max_iou = np.asarray(max_iou, dtype=np.float64)
    labels = np.full(max_iou.shape, IGNORED, dtype=np.int64)
    labels[max_iou > pos_thresh] = POSITIVE
    below = max_iou < neg_thresh
    if neg_thresh == pos_thresh:
        below |= max_iou <= pos_thresh
    labels[below] = NEGATIVE
    return labels


def assign_arrays(proposals, gts, cloud, pos_thresh=0.55, neg_thresh=0.55, grid=None):
    """Vectorised assignment: ``(labels, matched_gt, best_iou)`` arrays.

    ``matched_gt`` indexes into ``gts`` and is -1 for non-positives.
    """
    if not 0.0 <= neg_thresh <= pos_thresh <= 1.0:
        raise ValueError("need 0 <= neg_thresh <= pos_thresh <= 1")
    boxes = proposals.boxes if isinstance(proposals, ProposalSet) else as_box_array(
        [getattr(p, "box", p) for p in proposals])
    gt_boxes, gt_pos = _gt_boxes(gts)
    n = len(boxes)
    if len(gt_boxes) == 0 or n == 0:
        return (np.full(n, NEGATIVE, np.int64), np.full(n, -1, np.int64), np.zeros(n))
    ious = points_iou_matrix(cloud, boxes, gt_boxes, grid)
    best = ious.argmax(axis=1)  # first maximum -> lowest gt index on ties
    best_iou = ious[np.arange(n), best]
    labels = label_points_iou(best_iou, pos_thresh, neg_thresh)
    matched = np.where(labels == POSITIVE, gt_pos[best], -1)
    return labels, matched, best_iou


def assign_targets(proposals, gts, cloud, pos_thresh=0.55, neg_thresh=0.55, grid=None):
    """Label every proposal against the ground truths by PointsIoU."""
    labels, matched, ious = assign_arrays(proposals, gts, cloud, pos_thresh, neg_thresh, grid)
    return [
        TargetAssignment(i, int(labels[i]), int(matched[i]) if matched[i] >= 0 else None,
                         float(ious[i]))
        for i in range(len(labels))
    ]


def sample_minibatch(assignments, total=64, pos_fraction=0.25, rng=None):
    """Indices into ``assignments`` for one training minibatch.

    Draws ``round(total * pos_fraction)`` positives and fills the rest with
    negatives; a shortfall in one class is made up from the other. Ignored
    proposals are never drawn. Returns sorted indices.
    """
    if total <= 0:
        raise ValueError("total must be positive")
    if not 0.0 < pos_fraction < 1.0:
        raise ValueError("pos_fraction must lie in (0, 1)")
    rng = np.random.default_rng(rng)
    labels = np.array([a.label for a in assignments], dtype=np.int64)
    pos = np.flatnonzero(labels == POSITIVE)
    neg = np.flatnonzero(labels == NEGATIVE)
    if len(pos) + len(neg) < total:
        raise InsufficientProposalsError(
            f"need {total} proposals, only {len(pos)} positive + {len(neg)} negative")
    n_pos = min(int(round(total * pos_fraction)), len(pos))
    n_neg = total - n_pos
    if n_neg > len(neg):
        n_neg = len(neg)
        n_pos = total - n_neg
    picked = np.concatenate([rng.choice(pos, n_pos, replace=False),
                             rng.choice(neg, n_neg, replace=False)])
    return np.sort(picked.astype(np.int64))
