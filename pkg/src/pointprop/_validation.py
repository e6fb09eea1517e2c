"""Input coercion helpers shared by the public modules."""
import numbers

import numpy as np

from .errors import ShapeError


def as_xyz(cloud):
    """Float64 (N, 3) coordinates from a PointCloud or an (N, >=3) array."""
    pts = getattr(cloud, "points", cloud)
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] < 3:
        raise ShapeError(f"expected (N, >=3) points, got shape {pts.shape}")
    return np.ascontiguousarray(pts[:, :3])


def as_box_array(boxes):
    """Stack Box3D objects (or pass through an (K, 7) array) as float64 rows."""
    if isinstance(boxes, np.ndarray):
        arr = boxes.astype(np.float64, copy=False)
    else:
        boxes = list(boxes)
        if not boxes:
            return np.zeros((0, 7))
        arr = np.array([b.to_array() if hasattr(b, "to_array") else b for b in boxes],
                       dtype=np.float64)
    if arr.ndim == 1 and arr.shape[0] == 7:
        arr = arr[None]
    if arr.ndim != 2 or arr.shape[1] != 7:
        raise ShapeError(f"expected (K, 7) boxes, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def check_vector(v, n, name):
    arr = np.asarray(v, dtype=np.float64).reshape(-1)
    if arr.shape != (n,):
        raise ShapeError(f"{name} must have {n} components, got {arr.shape[0]}")
    return arr


def check_probability(p, name):
    if not isinstance(p, numbers.Real) or not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {p!r}")
    return float(p)
