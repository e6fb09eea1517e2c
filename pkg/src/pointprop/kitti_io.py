"""KITTI-format readers and writers, camera projection and mask transfer.

Formats:

* velodyne ``.bin``: little-endian float32 ``x y z r`` records.
* calibration ``.txt``: ``KEY: v0 v1 ...`` lines (P2, R0_rect, Tr_velo_to_cam).
* labels ``label_2/*.txt``: 15 whitespace-separated fields, optional 16th score.
* masks: binary PGM (P5), maxval 255; score = pixel / 255.
"""
from dataclasses import dataclass, field, replace
import math
from pathlib import Path

import numpy as np

from .errors import FieldCountError, FrameError, LengthError, MissingKeyError, ShapeError
from .geometry import Box3D, normalize_angle

DEFAULT_CLASSES = ("Car", "Pedestrian", "Cyclist")

VELODYNE = "velodyne"
CAMERA = "camera"


@dataclass(frozen=True)
class PointCloud:
    """N x 4 points (x, y, z, reflectance), a frame tag and optional scores."""

    points: np.ndarray = field(repr=False)
    frame: str = VELODYNE
    scores: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ShapeError(f"points must be (N, 4), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite values")
        if np.any((pts[:, 3] < 0.0) | (pts[:, 3] > 1.0)):
            raise ValueError("reflectance must lie in [0, 1]")
        if self.frame not in (VELODYNE, CAMERA):
            raise ValueError(f"unknown frame {self.frame!r}")
        object.__setattr__(self, "points", _frozen(pts))
        if self.scores is not None:
            sc = np.asarray(self.scores, dtype=np.float64).reshape(-1)
            if sc.shape[0] != pts.shape[0]:
                raise ShapeError("scores length differs from point count")
            if np.any(~np.isfinite(sc)) or np.any((sc < 0.0) | (sc > 1.0)):
                raise ValueError("scores must lie in [0, 1]")
            object.__setattr__(self, "scores", _frozen(sc))

    def __len__(self):
        return self.points.shape[0]

    @property
    def xyz(self):
        return self.points[:, :3]

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        scores = None if self.scores is None else self.scores[indices]
        return PointCloud(self.points[indices], self.frame, scores)

    def with_scores(self, scores):
        return replace(self, scores=scores)

    def with_xyz(self, xyz):
        pts = self.points.copy()
        pts[:, :3] = xyz
        return replace(self, points=pts)


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Calibration:
    P2: np.ndarray
    R0_rect: np.ndarray
    Tr_velo_to_cam: np.ndarray

    def __post_init__(self):
        for name, shape in (("P2", (3, 4)), ("R0_rect", (3, 3)), ("Tr_velo_to_cam", (3, 4))):
            m = np.asarray(getattr(self, name), dtype=np.float64)
            if m.shape != shape:
                raise ShapeError(f"{name} must be {shape}, got {m.shape}")
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, _frozen(m))
        if np.abs(self.R0_rect @ self.R0_rect.T - np.eye(3)).max() > 1e-3:
            raise ValueError("R0_rect is not orthonormal")

    @property
    def velo_to_rect(self):
        """4x4 homogeneous transform velodyne -> rectified camera."""
        tr = np.eye(4)
        tr[:3, :4] = self.Tr_velo_to_cam
        r0 = np.eye(4)
        r0[:3, :3] = self.R0_rect
        return r0 @ tr

    @classmethod
    def pinhole(cls, focal=721.5377, cx=609.5593, cy=172.854):
        """Rectified pinhole camera whose velodyne frame equals the camera frame."""
        p2 = np.array([[focal, 0, cx, 0], [0, focal, cy, 0], [0, 0, 1, 0]], dtype=float)
        return cls(p2, np.eye(3), np.hstack([np.eye(3), np.zeros((3, 1))]))


@dataclass(frozen=True)
class GroundTruthLabel:
    cls: str
    box: Box3D  # None for DontCare-style rows without a valid 3D box
    truncation: float = 0.0
    occlusion: int = 0
    alpha: float = -10.0
    bbox2d: tuple = (0.0, 0.0, 0.0, 0.0)
    score: float = None
    matchable: bool = True

    @property
    def bbox_height(self):
        return self.bbox2d[3] - self.bbox2d[1]


@dataclass(frozen=True)
class MaskImage:
    """Per-pixel foreground scores in [0, 1], stored as 8-bit values."""

    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] == 0 or px.shape[1] == 0:
            raise ShapeError("mask must be a non-empty 2D array")
        if px.dtype != np.uint8:
            raise ValueError("mask pixels must be uint8")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def scores(self):
        return self.pixels.astype(np.float64) / 255.0

    @classmethod
    def from_scores(cls, scores):
        s = np.clip(np.asarray(scores, dtype=np.float64), 0.0, 1.0)
        return cls(np.rint(s * 255.0).astype(np.uint8))


# -- point clouds -------------------------------------------------------------


def parse_point_cloud(data):
    if len(data) % 16:
        raise LengthError(f"velodyne buffer of {len(data)} bytes is not a multiple of 16")
    pts = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    if not np.all(np.isfinite(pts)):
        raise ValueError("velodyne buffer contains non-finite floats")
    return PointCloud(pts.astype(np.float64), VELODYNE)


def serialize_point_cloud(cloud):
    return np.ascontiguousarray(cloud.points, dtype="<f4").tobytes()


# -- calibration --------------------------------------------------------------

_CALIB_SHAPES = {"P2": (3, 4), "R0_rect": (3, 3), "Tr_velo_to_cam": (3, 4)}


def parse_calibration(text):
    values = {}
    for line in text.splitlines():
        if ":" not in line:
            continue
        key, _, rest = line.partition(":")
        values[key.strip()] = rest.split()
    mats = {}
    for key, shape in _CALIB_SHAPES.items():
        if key not in values:
            raise MissingKeyError(key)
        nums = [float(v) for v in values[key]]
        if len(nums) != shape[0] * shape[1]:
            raise ShapeError(f"{key} needs {shape[0] * shape[1]} values, got {len(nums)}")
        mats[key] = np.array(nums).reshape(shape)
    return Calibration(**mats)


def format_calibration(calib):
    lines = []
    for key in ("P2", "R0_rect", "Tr_velo_to_cam"):
        vals = " ".join(repr(float(v)) for v in getattr(calib, key).reshape(-1))
        lines.append(f"{key}: {vals}")
    return "\n".join(lines) + "\n"


# -- labels ---------------------------------------------------------------------


def parse_labels(text, classes=DEFAULT_CLASSES):
    """Parse label_2 text.

    KITTI stores ``h w l`` and the bottom-face center; boxes here carry
    ``(l, h, w)`` and the cuboid center (y shifted up by h/2). Rows whose class
    is not in ``classes`` are kept with ``matchable=False``.
    """
    labels = []
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) < 15:
            raise FieldCountError(f"line {lineno}: expected >= 15 fields, got {len(fields)}")
        name = fields[0]
        trunc, occ, alpha = float(fields[1]), int(float(fields[2])), float(fields[3])
        bbox = tuple(float(v) for v in fields[4:8])
        h, w, l = (float(v) for v in fields[8:11])
        x, y, z = (float(v) for v in fields[11:14])
        ry = float(fields[14])
        score = float(fields[15]) if len(fields) > 15 else None
        box = None
        if min(h, w, l) > 0 and all(math.isfinite(v) for v in (x, y, z, ry)):
            box = Box3D((x, y - h / 2.0, z), (l, h, w), normalize_angle(ry))
        labels.append(GroundTruthLabel(
            cls=name, box=box, truncation=trunc, occlusion=occ, alpha=alpha,
            bbox2d=bbox, score=score, matchable=name in classes and box is not None,
        ))
    return labels


def format_label(label):
    b = label.box
    if b is None:
        dims, loc, ry = (-1.0, -1.0, -1.0), (-1000.0, -1000.0, -1000.0), -10.0
    else:
        dims = (b.h, b.w, b.l)
        loc = (b.center[0], b.center[1] + b.h / 2.0, b.center[2])
        ry = b.yaw
    fields = [label.cls, repr(float(label.truncation)), str(int(label.occlusion)),
              repr(float(label.alpha))]
    fields += [repr(float(v)) for v in (*label.bbox2d, *dims, *loc, ry)]
    if label.score is not None:
        fields.append(repr(float(label.score)))
    return " ".join(fields)


# -- masks ----------------------------------------------------------------------

def _pgm_header(data):
    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(data):
            raise ValueError("truncated PGM header")
        ch = data[pos:pos + 1]
        if ch == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace():
                pos += 1
            tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    return tokens, pos + 1


def parse_pgm(data):
    """Decode a binary (P5) PGM with maxval 255."""
    tokens, pos = _pgm_header(data)
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != b"P5":
        raise ValueError(f"not a binary PGM (magic {magic!r})")
    if maxval != 255:
        raise ValueError(f"unsupported PGM maxval {maxval}")
    raw = data[pos:pos + width * height]
    if len(raw) != width * height:
        raise LengthError("PGM pixel data shorter than width * height")
    return MaskImage(np.frombuffer(raw, dtype=np.uint8).reshape(height, width))


def format_pgm(mask):
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    return header + mask.pixels.tobytes()


# -- transforms -------------------------------------------------------------------


def velo_to_camera(cloud, calib):
    if cloud.frame != VELODYNE:
        raise FrameError("cloud is already in the camera frame")
    hom = np.hstack([cloud.xyz, np.ones((len(cloud), 1))])
    cam = hom @ calib.velo_to_rect[:3].T
    return replace(cloud.with_xyz(cam), frame=CAMERA)


def project_to_image(cloud, calib, image_size=None):
    """Pixel coordinates (N, 2) and validity flags of camera-frame points.

    ``image_size`` is ``(width, height)``; without it only depth is checked.
    """
    if cloud.frame != CAMERA:
        raise FrameError("projection needs a camera-frame cloud")
    hom = np.hstack([cloud.xyz, np.ones((len(cloud), 1))])
    proj = hom @ calib.P2.T
    depth = proj[:, 2]
    valid = depth > 0.0
    safe = np.where(valid, depth, 1.0)
    uv = proj[:, :2] / safe[:, None]
    if image_size is not None:
        width, height = image_size
        valid &= (uv[:, 0] >= 0) & (uv[:, 0] < width) & (uv[:, 1] >= 0) & (uv[:, 1] < height)
    return uv, valid


def sample_mask(cloud, mask, calib):
    """Per-point mask score (floor pixel lookup) and in-image validity."""
    uv, valid = project_to_image(cloud, calib, (mask.width, mask.height))
    scores = np.zeros(len(cloud))
    cols = np.floor(uv[valid, 0]).astype(np.int64)
    rows = np.floor(uv[valid, 1]).astype(np.int64)
    scores[valid] = mask.pixels[rows, cols] / 255.0
    return scores, valid


def mask_filter(cloud, mask, calib, threshold=0.5, return_indices=False):
    """Keep in-image points whose mask score is >= ``threshold``.

    The kept cloud carries the sampled scores. ``threshold=0`` keeps every
    point that projects into the image, which is how the proposal pipeline
    crops a frame to the camera frustum before choosing foreground points.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    scores, valid = sample_mask(cloud, mask, calib)
    keep = np.flatnonzero(valid & (scores >= threshold))
    out = cloud.subset(keep).with_scores(scores[keep])
    if return_indices:
        return out, keep
    return out


# -- frame directories ------------------------------------------------------------


def frame_ids(root):
    return sorted(p.stem for p in (Path(root) / "velodyne").glob("*.bin"))


def frame_path(root, kind, frame_id):
    suffix = {"velodyne": ".bin", "calib": ".txt", "label_2": ".txt", "masks": ".pgm"}[kind]
    return (Path(root) / kind / f"{frame_id}{suffix}")


def load_point_cloud(path):
    return parse_point_cloud(Path(path).read_bytes())


def load_calibration(path):
    return parse_calibration(Path(path).read_text())


def load_labels(path, classes=DEFAULT_CLASSES):
    return parse_labels(Path(path).read_text(), classes)


def load_mask(path):
    return parse_pgm(Path(path).read_bytes())
