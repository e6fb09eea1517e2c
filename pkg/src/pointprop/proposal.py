"""Point-seeded box proposals.

Pipeline per frame: choose N foreground points (padding with background),
seed k anchor boxes on every foreground point, align each box to the
centroid of its interior points, score it by the summed foreground scores of
those points and thin the set with rotated BEV NMS.

Large proposal sets live in :class:`ProposalSet` (struct of arrays); single
proposals are :class:`Proposal` objects.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from . import _kernels as K
from ._grid import PointGrid
from ._validation import as_box_array, as_xyz
from .errors import EmptyCloudError, EmptyProposalError
from .geometry import Box3D, points_in_box

CAR_SIZE = (3.9, 1.6, 1.6)
PEDESTRIAN_SIZE = (1.6, 1.6, 0.8)
CYCLIST_SIZE = (0.8, 1.6, 0.8)
ANCHOR_YAWS = (0.0, math.pi / 2)
SHIFT_RATIOS = (-0.5, 0.0, 0.5)

DEFAULT_NMS_THRESHOLD = 0.7
DEFAULT_MAX_KEEP = 500
MAX_ALIGN_ITER = 3


@dataclass(frozen=True)
class AnchorConfig:
    sizes: tuple = (CAR_SIZE,)
    yaws: tuple = ANCHOR_YAWS
    shift_ratios: tuple = SHIFT_RATIOS

    def __post_init__(self):
        sizes = tuple(tuple(float(v) for v in s) for s in self.sizes)
        if not sizes or any(len(s) != 3 or min(s) <= 0 for s in sizes):
            raise ValueError(f"anchor sizes must be positive (l, h, w) triples: {self.sizes}")
        if not self.yaws or not self.shift_ratios:
            raise ValueError("anchor yaws and shift ratios must be non-empty")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "yaws", tuple(float(v) for v in self.yaws))
        object.__setattr__(self, "shift_ratios", tuple(float(v) for v in self.shift_ratios))

    @property
    def k(self):
        """Proposals seeded per foreground point."""
        return len(self.sizes) * len(self.yaws) * len(self.shift_ratios)

    @classmethod
    def car(cls):
        return cls((CAR_SIZE,))

    @classmethod
    def pedestrian_cyclist(cls):
        return cls((PEDESTRIAN_SIZE, CYCLIST_SIZE))


@dataclass(frozen=True)
class Proposal:
    box: Box3D
    seed_index: int
    score: float = 0.0
    interior: tuple = ()
    aligned: bool = False
    anchor_size: tuple = None

    def __post_init__(self):
        interior = tuple(int(i) for i in self.interior)
        if any(b <= a for a, b in zip(interior, interior[1:])):
            raise ValueError("interior indices must be strictly increasing")
        if interior and interior[0] < 0:
            raise ValueError("negative interior index")
        if self.score < 0:
            raise ValueError("proposal score must be non-negative")
        object.__setattr__(self, "interior", interior)
        if self.anchor_size is None:
            object.__setattr__(self, "anchor_size", self.box.size)


@dataclass
class ProposalSet:
    """Proposals as parallel arrays; ``boxes`` rows are [x, y, z, l, h, w, yaw]."""

    boxes: np.ndarray
    seed_index: np.ndarray
    anchors: np.ndarray
    scores: np.ndarray = None
    counts: np.ndarray = None
    aligned: bool = False
    interior_ptr: np.ndarray = field(default=None, repr=False)
    interior_idx: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.boxes)
        self.boxes = np.ascontiguousarray(self.boxes, dtype=np.float64).reshape(n, 7)
        self.seed_index = np.asarray(self.seed_index, dtype=np.int64)
        self.anchors = np.ascontiguousarray(self.anchors, dtype=np.float64).reshape(n, 3)
        if self.scores is None:
            self.scores = np.zeros(n)
        if self.counts is None:
            self.counts = np.zeros(n, dtype=np.int64)

    def __len__(self):
        return len(self.boxes)

    def __getitem__(self, i):
        interior = ()
        if self.interior_ptr is not None:
            interior = self.interior_idx[self.interior_ptr[i]:self.interior_ptr[i + 1]]
        return Proposal(Box3D.from_array(self.boxes[i]), int(self.seed_index[i]),
                        float(self.scores[i]), interior, self.aligned,
                        tuple(self.anchors[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        ptr = ind = None
        if self.interior_ptr is not None:
            parts = [self.interior_idx[self.interior_ptr[i]:self.interior_ptr[i + 1]] for i in idx]
            ptr = np.zeros(len(idx) + 1, dtype=np.int64)
            np.cumsum([len(p) for p in parts], out=ptr[1:])
            ind = np.concatenate(parts) if parts else np.zeros(0, np.int64)
        return ProposalSet(self.boxes[idx], self.seed_index[idx], self.anchors[idx],
                           self.scores[idx], self.counts[idx], self.aligned, ptr, ind)

    def interior(self, i):
        if self.interior_ptr is None:
            raise ValueError("interiors not computed; call with_interiors first")
        return self.interior_idx[self.interior_ptr[i]:self.interior_ptr[i + 1]]

    def with_interiors(self, cloud, grid=None):
        grid = grid or PointGrid.build(as_xyz(cloud))
        ptr, idx = K.box_members(self.boxes, grid.pts, grid.order, *grid.args)
        return ProposalSet(self.boxes, self.seed_index, self.anchors, self.scores,
                           np.diff(ptr), self.aligned, ptr, idx)

    @classmethod
    def from_proposals(cls, proposals):
        proposals = list(proposals)
        if not proposals:
            return cls(np.zeros((0, 7)), np.zeros(0, np.int64), np.zeros((0, 3)))
        return cls(as_box_array([p.box for p in proposals]),
                   [p.seed_index for p in proposals],
                   [p.anchor_size for p in proposals],
                   np.array([p.score for p in proposals], dtype=float),
                   np.array([len(p.interior) for p in proposals], dtype=np.int64),
                   all(p.aligned for p in proposals))


@dataclass(frozen=True)
class PointSelection:
    """Fixed-size point subset: the cloud, source indices and positivity flags."""

    cloud: object
    indices: np.ndarray
    positive: np.ndarray

    @property
    def num_positive(self):
        return int(np.count_nonzero(self.positive))


def select_positive_points(cloud, n, rng=None, threshold=0.5):
    """Choose exactly ``n`` points, foreground first.

    Foreground means ``score >= threshold``. With more foreground than ``n`` a
    uniform n-subset is drawn; otherwise all foreground is kept and the rest
    is padded uniformly from background (flagged negative). If the frame has
    fewer than ``n`` points in total the pad repeats background points (or
    foreground points, when there is no background), still flagged negative.
    Selected indices come back in ascending order.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if len(cloud) == 0:
        raise EmptyCloudError("cannot select points from an empty cloud")
    if cloud.scores is None:
        raise ValueError("cloud needs foreground scores")
    rng = np.random.default_rng(rng)
    fg = np.flatnonzero(cloud.scores >= threshold)
    bg = np.flatnonzero(cloud.scores < threshold)
    if len(fg) >= n:
        pos = np.sort(rng.choice(fg, size=n, replace=False))
        pad = np.zeros(0, dtype=np.int64)
    else:
        pos = fg
        need = n - len(fg)
        pool = bg if len(bg) else fg
        pad = rng.choice(pool, size=need, replace=len(pool) < need)
    indices = np.concatenate([pos, pad]).astype(np.int64)
    positive = np.concatenate([np.ones(len(pos), bool), np.zeros(len(pad), bool)])
    order = np.argsort(indices, kind="stable")
    indices, positive = indices[order], positive[order]
    return PointSelection(cloud.subset(indices), indices, positive)


def seed_proposals(points, config=None, positive=None):
    """Seed ``config.k`` anchor boxes on every positive point.

    For each positive point, size, yaw and shift ratio (in that nesting order)
    a box of the anchor size is centered on the point and slid by
    ``ratio * l`` along its own length axis ``(cos yaw, 0, -sin yaw)``.
    """
    config = config or AnchorConfig()
    if isinstance(points, PointSelection):
        if positive is None:
            positive = points.positive
        points = points.cloud
    xyz = as_xyz(points)
    seeds = np.arange(len(xyz)) if positive is None else np.flatnonzero(positive)
    combos = [(s, y, r) for s in config.sizes for y in config.yaws for r in config.shift_ratios]
    k = len(combos)
    size = np.array([c[0] for c in combos])
    yaw = np.array([c[1] for c in combos])
    shift = np.array([c[2] for c in combos]) * size[:, 0]
    offset = np.stack([shift * np.cos(yaw), np.zeros(k), -shift * np.sin(yaw)], axis=1)
    centers = (xyz[seeds, None, :] + offset[None]).reshape(-1, 3)
    boxes = np.empty((len(seeds) * k, 7))
    boxes[:, :3] = centers
    boxes[:, 3:6] = np.tile(size, (len(seeds), 1))
    boxes[:, 6] = np.tile(yaw, len(seeds))
    return ProposalSet(boxes, np.repeat(seeds, k), boxes[:, 3:6].copy())


def align_proposal(p, cloud, max_iter=MAX_ALIGN_ITER):
    """Re-center ``p`` on its interior centroid at its anchor size.

    Repeats while re-centering changes the interior set, at most ``max_iter``
    times. Raises EmptyProposalError when the box holds no points.
    """
    xyz = as_xyz(cloud)
    box = p.box
    mask = points_in_box(xyz, box)
    if not mask.any():
        raise EmptyProposalError(f"proposal seeded at {p.seed_index} has no interior points")
    for _ in range(max_iter):
        new = Box3D(xyz[mask].mean(axis=0), p.anchor_size, box.yaw)
        new_mask = points_in_box(xyz, new)
        stable = np.array_equal(new_mask, mask)
        box, mask = new, new_mask
        if stable or not mask.any():
            break
    if not mask.any():
        raise EmptyProposalError(f"proposal seeded at {p.seed_index} emptied during alignment")
    interior = np.flatnonzero(mask)
    scores = getattr(cloud, "scores", None)
    score = float(scores[interior].sum()) if scores is not None else p.score
    return Proposal(box, p.seed_index, score, interior, True, p.anchor_size)


def align_proposals(proposals, cloud, max_iter=MAX_ALIGN_ITER, grid=None):
    """Batched :func:`align_proposal`; proposals that end up empty are dropped.

    Scores of the returned set are the summed foreground scores of each
    aligned interior (zero weights when the cloud has no scores).
    """
    xyz = as_xyz(cloud)
    grid = grid or PointGrid.build(xyz)
    weights = _weights(cloud, len(xyz))
    boxes, counts, wsum, ok = K.align_boxes(
        proposals.boxes, proposals.anchors, grid.pts, grid.sorted_values(weights),
        *grid.args, max_iter)
    keep = np.flatnonzero(ok)
    return ProposalSet(boxes[keep], proposals.seed_index[keep], proposals.anchors[keep],
                       wsum[keep], counts[keep], True)


def _weights(cloud, n):
    scores = getattr(cloud, "scores", None)
    return np.zeros(n) if scores is None else np.asarray(scores, dtype=np.float64)


def score_proposal(p, scores):
    """Sum of the foreground scores of the interior points."""
    if not p.interior:
        return 0.0
    return float(np.asarray(scores, dtype=np.float64)[list(p.interior)].sum())


def score_proposals(proposals, cloud, grid=None):
    xyz = as_xyz(cloud)
    grid = grid or PointGrid.build(xyz)
    counts, _, wsum = K.box_stats(proposals.boxes, grid.pts,
                                  grid.sorted_values(_weights(cloud, len(xyz))), *grid.args)
    return ProposalSet(proposals.boxes, proposals.seed_index, proposals.anchors, wsum,
                       counts, proposals.aligned, proposals.interior_ptr,
                       proposals.interior_idx)


def nms_order(scores, seed_index):
    """Visiting order for NMS: score descending, then lower seed index."""
    return np.lexsort((np.asarray(seed_index), -np.asarray(scores, dtype=np.float64)))


def nms_boxes(boxes, scores, iou_threshold, max_keep=None, tiebreak=None):
    """Greedy rotated-BEV NMS on raw arrays; returns kept row indices in visit order.

    Boxes with IoU strictly above ``iou_threshold`` to a kept box are dropped.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in [0, 1]")
    boxes = as_box_array(boxes)
    if max_keep is None:
        max_keep = len(boxes)
    if max_keep <= 0:
        raise ValueError("max_keep must be positive")
    if len(boxes) == 0:
        return np.zeros(0, dtype=np.int64)
    tiebreak = np.arange(len(boxes)) if tiebreak is None else tiebreak
    order = nms_order(scores, tiebreak).astype(np.int64)
    return K.nms_rotated(boxes, order, float(iou_threshold), int(max_keep))


def nms_bev(proposals, iou_threshold=DEFAULT_NMS_THRESHOLD, max_keep=DEFAULT_MAX_KEEP):
    """NMS over proposals; accepts a ProposalSet or a sequence of Proposal."""
    as_list = not isinstance(proposals, ProposalSet)
    ps = ProposalSet.from_proposals(proposals) if as_list else proposals
    keep = nms_boxes(ps.boxes, ps.scores, iou_threshold, max_keep, ps.seed_index)
    if as_list:
        proposals = list(proposals)
        return [proposals[i] for i in keep]
    return ps.take(keep)


def generate_proposals(selection, config=None, iou_threshold=DEFAULT_NMS_THRESHOLD,
                       max_keep=DEFAULT_MAX_KEEP, max_iter=MAX_ALIGN_ITER,
                       with_interiors=True):
    """Seed, align, score and NMS on a :class:`PointSelection`.

    Returns the surviving proposals, score-descending.
    """
    cloud = selection.cloud
    grid = PointGrid.build(cloud.xyz)
    seeded = seed_proposals(cloud, config, selection.positive)
    aligned = align_proposals(seeded, cloud, max_iter, grid)
    kept = nms_bev(aligned, iou_threshold, max_keep)
    if with_interiors:
        kept = kept.with_interiors(cloud, grid)
    return kept
