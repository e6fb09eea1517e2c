"""Multi-task detection loss as plain numpy functions.

total = (1/N_cls) sum_i CE(s_i, u_i)
      + lam * (1/N_pos) sum_{i: u_i >= 1} (L_loc + L_angle + L_corner)

with smooth-L1 (transition at 1) for every distance term.
"""
from dataclasses import dataclass
import math

import numpy as np

from .encoding import NUM_ANGLE_BINS, decode_box
from .errors import RangeError
from .geometry import box_corners


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    cls: float
    loc: float
    angle: float
    corner: float
    n_cls: int
    n_pos: int
    lam: float

    def recompute_total(self):
        return self.cls / max(self.n_cls, 1) + self.lam * (
            self.loc + self.angle + self.corner) / max(self.n_pos, 1)


def smooth_l1(x):
    """Summed smooth-L1 value and its element-wise derivative."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    small = ax < 1.0
    value = np.where(small, 0.5 * x * x, ax - 0.5)
    grad = np.where(small, x, np.sign(x))
    if x.ndim == 0:
        return float(value), float(grad)
    return float(value.sum()), grad


def softmax_cross_entropy(logits, label):
    """``-log softmax(logits)[label]`` and its gradient w.r.t. the logits."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not 0 <= label < len(z):
        raise RangeError(f"label {label} outside [0, {len(z)})")
    shifted = z - z.max()
    log_norm = np.log(np.exp(shifted).sum())
    prob = np.exp(shifted - log_norm)
    grad = prob.copy()
    grad[label] -= 1.0
    return float(log_norm - shifted[label]), grad


def location_loss(pred, target):
    return (smooth_l1(pred.t_ctr - target.v_ctr)[0]
            + smooth_l1(pred.t_ctr_star - target.v_ctr_star)[0]
            + smooth_l1(pred.t_size_star - target.v_size_star)[0])


def angle_loss(pred, target, num_bins=NUM_ANGLE_BINS):
    if pred.num_bins != num_bins:
        raise ValueError(f"prediction has {pred.num_bins} heading bins, expected {num_bins}")
    ce, _ = softmax_cross_entropy(pred.angle_logits, target.angle_bin)
    res, _ = smooth_l1(pred.angle_residuals[target.angle_bin] - target.angle_residual)
    return ce + res


def corner_loss(pred_box, gt_box):
    """Sum of distances between matching corners (canonical order, no flip)."""
    diff = box_corners(pred_box) - box_corners(gt_box)
    return float(np.sqrt((diff * diff).sum(axis=1)).sum())


def total_loss(predictions, labels, targets=None, proposal_boxes=None, gt_boxes=None,
               lam=1.0, num_bins=NUM_ANGLE_BINS):
    """Batch loss.

    ``labels[i]`` is the class index of proposal i (0 = background). For every
    positive, ``targets[i]``, ``proposal_boxes[i]`` and ``gt_boxes[i]`` must be
    given; entries for negatives are ignored.
    """
    n = len(predictions)
    if len(labels) != n:
        raise ValueError("predictions and labels differ in length")
    # fsum keeps the result independent of proposal order
    cls_terms, loc_terms, ang_terms, cor_terms = [], [], [], []
    for i, (pred, u) in enumerate(zip(predictions, labels)):
        cls_terms.append(softmax_cross_entropy(pred.class_logits, int(u))[0])
        if u < 1:
            continue
        target = targets[i]
        loc_terms.append(location_loss(pred, target))
        ang_terms.append(angle_loss(pred, target, num_bins))
        cor_terms.append(corner_loss(decode_box(proposal_boxes[i], pred), gt_boxes[i]))
    n_pos = len(loc_terms)
    cls_sum, loc_sum = math.fsum(cls_terms), math.fsum(loc_terms)
    ang_sum, cor_sum = math.fsum(ang_terms), math.fsum(cor_terms)
    total = cls_sum / max(n, 1) + lam * (loc_sum + ang_sum + cor_sum) / max(n_pos, 1)
    return LossBreakdown(total, cls_sum, loc_sum, ang_sum, cor_sum, n, n_pos, lam)
