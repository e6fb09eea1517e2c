"""Regression targets, heading bins and box decoding.

Targets for a proposal ``p`` matched to ground truth ``g`` with T-Net center
shift ``t``::

    v_ctr      = g_k - p_k                  k in (x, y, z)
    v_ctr_star = g_k - p_k - t_k
    v_size     = (g_k - p_k) / p_k          k in (l, h, w)

Heading is a class over ``num_bins`` equal sectors of [-pi, pi) plus a
residual to the sector center. Decoding inverts all of it; the final center
is ``proposal center + t_ctr + t_ctr_star``.
"""
from dataclasses import dataclass, field
import math
import struct

import numpy as np

from ._validation import check_vector
from .errors import EmptyProposalError, LengthError, RangeError, ShapeError
from .geometry import Box3D, normalize_angle

NUM_ANGLE_BINS = 12
POINTS_PER_PROPOSAL = 512
MIN_DECODED_SIZE = 0.01


@dataclass(frozen=True)
class RegressionTarget:
    v_ctr: np.ndarray
    v_ctr_star: np.ndarray
    v_size_star: np.ndarray
    angle_bin: int
    angle_residual: float


@dataclass(frozen=True)
class PredictionVector:
    class_logits: np.ndarray
    t_ctr: np.ndarray
    t_ctr_star: np.ndarray
    t_size_star: np.ndarray
    angle_logits: np.ndarray
    angle_residuals: np.ndarray

    def __post_init__(self):
        for name in ("t_ctr", "t_ctr_star", "t_size_star"):
            object.__setattr__(self, name, check_vector(getattr(self, name), 3, name))
        logits = np.asarray(self.angle_logits, dtype=np.float64).reshape(-1)
        res = np.asarray(self.angle_residuals, dtype=np.float64).reshape(-1)
        if logits.shape != res.shape:
            raise ShapeError("angle_logits and angle_residuals differ in length")
        object.__setattr__(self, "angle_logits", logits)
        object.__setattr__(self, "angle_residuals", res)
        object.__setattr__(self, "class_logits",
                           np.asarray(self.class_logits, dtype=np.float64).reshape(-1))
        for name in ("class_logits", "angle_logits", "angle_residuals"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")

    @property
    def num_bins(self):
        return len(self.angle_logits)

    @classmethod
    def from_target(cls, target, t_ctr=(0.0, 0.0, 0.0), num_bins=NUM_ANGLE_BINS,
                    class_logits=(0.0, 0.0), margin=1.0):
        """The prediction that reproduces ``target`` exactly (one-hot heading)."""
        logits = np.zeros(num_bins)
        logits[target.angle_bin] = margin
        res = np.zeros(num_bins)
        res[target.angle_bin] = target.angle_residual
        return cls(class_logits, t_ctr, target.v_ctr_star, target.v_size_star, logits, res)


@dataclass(frozen=True)
class ProposalFeature:
    f1: np.ndarray = field(repr=False)
    f2: np.ndarray = field(repr=False)
    point_indices: np.ndarray

    @property
    def combined(self):
        return np.hstack([self.f1, self.f2])


def bin_width(num_bins):
    return 2.0 * math.pi / num_bins


def angle_bin_center(bin_index, num_bins=NUM_ANGLE_BINS):
    if not 0 <= bin_index < num_bins:
        raise RangeError(f"bin {bin_index} outside [0, {num_bins})")
    return -math.pi + (bin_index + 0.5) * bin_width(num_bins)


def angle_to_bin(angle, num_bins=NUM_ANGLE_BINS):
    """``(bin, residual)`` of a heading."""
    a = normalize_angle(angle)
    b = min(int(math.floor((a + math.pi) / bin_width(num_bins))), num_bins - 1)
    return b, a - angle_bin_center(b, num_bins)


def encode_targets(proposal_box, t_ctr_pred, gt_box, num_bins=NUM_ANGLE_BINS):
    p_c = np.asarray(proposal_box.center)
    g_c = np.asarray(gt_box.center)
    t = check_vector(t_ctr_pred, 3, "t_ctr_pred")
    p_s = np.asarray(proposal_box.size)
    b, res = angle_to_bin(gt_box.yaw, num_bins)
    return RegressionTarget(
        v_ctr=g_c - p_c,
        v_ctr_star=g_c - p_c - t,
        v_size_star=(np.asarray(gt_box.size) - p_s) / p_s,
        angle_bin=b,
        angle_residual=res,
    )


def decode_box(proposal_box, pred, return_degenerate=False):
    """Box predicted for ``proposal_box``.

    Sizes below 1 cm are clamped; ``return_degenerate`` additionally returns
    whether any clamp fired.
    """
    center = np.asarray(proposal_box.center) + pred.t_ctr + pred.t_ctr_star
    size = np.asarray(proposal_box.size) * (1.0 + pred.t_size_star)
    degenerate = bool(np.any(size < MIN_DECODED_SIZE))
    size = np.maximum(size, MIN_DECODED_SIZE)
    b = int(np.argmax(pred.angle_logits))
    yaw = angle_bin_center(b, pred.num_bins) + pred.angle_residuals[b]
    box = Box3D(center, size, yaw)
    if return_degenerate:
        return box, degenerate
    return box


def sample_proposal_points(interior, m=POINTS_PER_PROPOSAL, rng=None):
    """Exactly ``m`` indices drawn from ``interior``.

    Without replacement when the interior is large enough, with replacement
    otherwise.
    """
    interior = np.asarray(interior, dtype=np.int64)
    if len(interior) == 0:
        raise EmptyProposalError("cannot sample points from an empty proposal")
    rng = np.random.default_rng(rng)
    return rng.choice(interior, size=m, replace=len(interior) < m)


def canonize(points, t_ctr=(0.0, 0.0, 0.0)):
    """Centroid-normalised coordinates minus the predicted center shift."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise ShapeError("canonize needs a non-empty (M, 3) array")
    return (pts - pts.mean(axis=0)) - check_vector(t_ctr, 3, "t_ctr")


def proposal_feature(interior, cloud, features=None, m=POINTS_PER_PROPOSAL,
                     t_ctr=(0.0, 0.0, 0.0), rng=None):
    """Gather the (F1, F2) feature for one proposal.

    ``features`` holds per-point context rows (N x C) from an external
    backbone; without it F1 has zero columns.
    """
    idx = sample_proposal_points(interior, m, rng)
    xyz = np.asarray(getattr(cloud, "xyz", cloud), dtype=np.float64)[:, :3]
    if features is None:
        f1 = np.zeros((m, 0))
    else:
        f1 = np.asarray(features)[idx]
    return ProposalFeature(f1, canonize(xyz[idx], t_ctr), idx)


# -- per-frame feature file: u32 N, u32 C (little endian), then N*C float32 ------


def read_features(data):
    if len(data) < 8:
        raise LengthError("feature file shorter than its header")
    n, c = struct.unpack("<II", data[:8])
    body = data[8:]
    if len(body) != n * c * 4:
        raise LengthError(f"feature body has {len(body)} bytes, expected {n * c * 4}")
    return np.frombuffer(body, dtype="<f4").reshape(n, c)


def write_features(rows):
    rows = np.ascontiguousarray(rows, dtype="<f4")
    if rows.ndim != 2:
        raise ShapeError("features must be a 2D array")
    return struct.pack("<II", *rows.shape) + rows.tobytes()
