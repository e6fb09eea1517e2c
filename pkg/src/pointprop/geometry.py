"""Oriented 3D box geometry in KITTI camera coordinates.

Frame: x right, y down, z forward. Boxes rotate about the vertical (y) axis and
the bird's-eye view (BEV) is the x-z plane. A box with yaw ``t`` has its
length axis along ``(cos t, 0, -sin t)``, which is the KITTI ``rotation_y``
convention. Box centers are cuboid centers, not bottom-face centers.

Containment is closed: points on a face are inside (with a 1e-9 m slack).
"""
from dataclasses import dataclass, field, replace
import math

import numpy as np

from . import _kernels as K
from ._grid import PointGrid
from ._validation import as_box_array, as_xyz

__all__ = [
    "Box3D", "BevPolygon", "normalize_angle", "box_corners", "box_from_corners",
    "point_in_box", "points_in_box", "bev_polygon", "polygon_intersection_area",
    "bev_iou", "iou_3d", "points_iou", "bev_iou_matrix", "iou_3d_matrix",
    "points_iou_matrix", "points_in_boxes", "rotation_y",
]


def normalize_angle(angle):
    """Map radians into [-pi, pi). Works on scalars and arrays."""
    a = np.arctan2(np.sin(angle), np.cos(angle))
    a = np.where(a >= np.pi, a - 2.0 * np.pi, a)
    if np.ndim(a) == 0:
        return float(a)
    return a


def rotation_y(angle):
    """Rotation matrix about the camera y axis that maps box-local to world."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class Box3D:
    """Oriented cuboid: center (x, y, z), size (l, h, w), yaw about y."""

    center: tuple
    size: tuple
    yaw: float = 0.0

    def __post_init__(self):
        center = tuple(float(v) for v in np.asarray(self.center, dtype=float).reshape(-1))
        size = tuple(float(v) for v in np.asarray(self.size, dtype=float).reshape(-1))
        if len(center) != 3 or len(size) != 3:
            raise ValueError("center and size need three components each")
        if not all(math.isfinite(v) for v in center):
            raise ValueError(f"non-finite box center {center}")
        if not all(math.isfinite(v) and v > 0.0 for v in size):
            raise ValueError(f"box sizes must be positive and finite, got {size}")
        if not math.isfinite(float(self.yaw)):
            raise ValueError("non-finite yaw")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    @property
    def l(self):
        return self.size[0]

    @property
    def h(self):
        return self.size[1]

    @property
    def w(self):
        return self.size[2]

    @property
    def volume(self):
        return self.size[0] * self.size[1] * self.size[2]

    def to_array(self):
        return np.array([*self.center, *self.size, self.yaw])

    @classmethod
    def from_array(cls, row):
        row = np.asarray(row, dtype=float)
        return cls(row[:3], row[3:6], row[6])

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class BevPolygon:
    """Convex polygon in the x-z plane, counter-clockwise."""

    vertices: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("a polygon needs at least 3 (x, z) vertices")
        if _signed_area(v) <= 0.0:
            raise ValueError("polygon vertices must be counter-clockwise")
        edges = np.roll(v, -1, axis=0) - v
        turns = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
        if np.any(turns < -1e-9):
            raise ValueError("polygon is not convex")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def area(self):
        return _signed_area(self.vertices)


def _signed_area(v):
    x, z = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(z, -1)) - np.dot(z, np.roll(x, -1)))


_LOCAL_CORNERS = np.array([
    [1, 1, 1], [-1, 1, 1], [-1, 1, -1], [1, 1, -1],
    [1, -1, 1], [-1, -1, 1], [-1, -1, -1], [1, -1, -1],
], dtype=np.float64) * 0.5


def box_corners(box):
    """The 8 corners of ``box`` as an (8, 3) array.

    Order: bottom face (y = +h/2, since y points down) counter-clockwise seen
    from above starting at local (+l/2, +w/2), then the top face in the same
    order. Local axes are (l, h, w) = (x, y, z) before yaw.
    """
    local = _LOCAL_CORNERS * np.array(box.size)
    return local @ rotation_y(box.yaw).T + np.array(box.center)


def box_from_corners(corners):
    """Inverse of :func:`box_corners` for corners in canonical order."""
    c = np.asarray(corners, dtype=np.float64)
    center = c.mean(axis=0)
    along_l = c[0] - c[1]
    l = float(np.linalg.norm(along_l))
    w = float(np.linalg.norm(c[1] - c[2]))
    h = float(np.linalg.norm(c[0] - c[4]))
    yaw = math.atan2(-along_l[2], along_l[0])
    return Box3D(center, (l, h, w), yaw)


def point_in_box(point, box):
    p = np.asarray(point, dtype=np.float64)
    x, y, z = box.center
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    return bool(K.inside_box(p[0], p[1], p[2], x, y, z,
                             0.5 * box.l, 0.5 * box.h, 0.5 * box.w, c, s))


def points_in_box(cloud, box):
    """Boolean mask of cloud points inside ``box``."""
    return K.points_in_box_mask(as_xyz(cloud), as_box_array([box])[0])


def bev_polygon(box):
    corners = np.empty((4, 2))
    K._bev_corners(box.center[0], box.center[2], box.l, box.w, box.yaw, corners)
    return BevPolygon(corners)


def polygon_intersection_area(a, b):
    if not isinstance(a, BevPolygon):
        a = BevPolygon(a)
    if not isinstance(b, BevPolygon):
        b = BevPolygon(b)
    return float(K.convex_intersection_area(a.vertices, b.vertices))


def _standup(boxes):
    # axis-aligned BEV extent of each rotated rectangle: (x0, z0, x1, z1)
    corners = K.bev_corners_batch(boxes)
    return np.concatenate([corners.min(axis=1), corners.max(axis=1)], axis=1)


def _aligned_inter(sa, sb):
    dx = np.minimum(sa[:, None, 2], sb[None, :, 2]) - np.maximum(sa[:, None, 0], sb[None, :, 0])
    dz = np.minimum(sa[:, None, 3], sb[None, :, 3]) - np.maximum(sa[:, None, 1], sb[None, :, 1])
    return np.clip(dx, 0, None) * np.clip(dz, 0, None)


def bev_intersection_matrix(boxes_a, boxes_b, axis_aligned=False):
    a, b = as_box_array(boxes_a), as_box_array(boxes_b)
    if axis_aligned:
        return _aligned_inter(_standup(a), _standup(b))
    return K.bev_inter_matrix(a, b)


def bev_iou_matrix(boxes_a, boxes_b, axis_aligned=False):
    """Pairwise BEV IoU.

    With ``axis_aligned`` each rectangle is replaced by its axis-aligned
    bounding rectangle first (a cheap approximation, exact at yaw 0 / 90 deg).
    """
    a, b = as_box_array(boxes_a), as_box_array(boxes_b)
    inter = bev_intersection_matrix(a, b, axis_aligned)
    if axis_aligned:
        sa, sb = _standup(a), _standup(b)
        area_a = (sa[:, 2] - sa[:, 0]) * (sa[:, 3] - sa[:, 1])
        area_b = (sb[:, 2] - sb[:, 0]) * (sb[:, 3] - sb[:, 1])
    else:
        area_a, area_b = a[:, 3] * a[:, 5], b[:, 3] * b[:, 5]
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def bev_iou(a, b, axis_aligned=False):
    return float(bev_iou_matrix([a], [b], axis_aligned)[0, 0])


def iou_3d_matrix(boxes_a, boxes_b):
    a, b = as_box_array(boxes_a), as_box_array(boxes_b)
    inter_bev = K.bev_inter_matrix(a, b)
    top = np.maximum(a[:, None, 1] - a[:, None, 4] / 2, b[None, :, 1] - b[None, :, 4] / 2)
    bottom = np.minimum(a[:, None, 1] + a[:, None, 4] / 2, b[None, :, 1] + b[None, :, 4] / 2)
    inter = inter_bev * np.clip(bottom - top, 0.0, None)
    vol_a = a[:, 3] * a[:, 4] * a[:, 5]
    vol_b = b[:, 3] * b[:, 4] * b[:, 5]
    union = vol_a[:, None] + vol_b[None, :] - inter
    return inter / union


def iou_3d(a, b):
    return float(iou_3d_matrix([a], [b])[0, 0])


def points_in_boxes(cloud, boxes, grid=None):
    """Interior point indices of every box, as a list of sorted index arrays."""
    ptr, idx = _members(cloud, boxes, grid)
    return [idx[ptr[i]:ptr[i + 1]] for i in range(len(ptr) - 1)]


def _members(cloud, boxes, grid=None):
    grid = grid or PointGrid.build(as_xyz(cloud))
    return K.box_members(as_box_array(boxes), grid.pts, grid.order, *grid.args)


def points_iou_matrix(cloud, boxes_a, boxes_b, grid=None):
    """Pairwise PointsIoU: |S_a & S_b| / |S_a | S_b| over a shared cloud.

    A pair whose union is empty gets 0.
    """
    xyz = as_xyz(cloud)
    a, b = as_box_array(boxes_a), as_box_array(boxes_b)
    grid = grid or PointGrid.build(xyz)
    ptr, idx = K.box_members(b, grid.pts, grid.order, *grid.args)
    membership = np.zeros((len(xyz), len(b)), dtype=np.bool_)
    for j in range(len(b)):
        membership[idx[ptr[j]:ptr[j + 1]], j] = True
    count_b = np.diff(ptr)
    count_a, inter = K.box_overlap_counts(a, grid.pts, grid.sorted_values(membership),
                                          *grid.args)
    union = count_a[:, None] + count_b[None, :] - inter
    return np.where(union > 0, inter / np.maximum(union, 1), 0.0)


def points_iou(cloud, a, b):
    xyz = as_xyz(cloud)
    sa = points_in_box(xyz, a)
    sb = points_in_box(xyz, b)
    union = int(np.count_nonzero(sa | sb))
    if union == 0:
        return 0.0
    return np.count_nonzero(sa & sb) / union
