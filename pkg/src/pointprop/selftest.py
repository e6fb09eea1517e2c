"""Built-in oracle checks run by ``pointprop selftest``.

Each suite compares library output against an independent slow computation:

* ``iou_oracle``: rotated BEV IoU against scanline integration of the two
  rectangles' half-plane descriptions;
* ``points_iou_oracle``: PointsIoU against per-point membership computed by
  solving for local coordinates;
* ``encode_decode``: decode(encode(gt)) reproduces gt;
* ``loss``: analytic gradients against central differences, plus the corner
  loss of a translated box.

``faults`` names deliberate defects to inject (test hook for the checker
itself); the only one is ``bev_iou_sign``, which negates the second box's yaw.
"""
from dataclasses import dataclass
import math
import time

import numpy as np

from .encoding import PredictionVector, decode_box, encode_targets
from .geometry import Box3D, bev_iou_matrix, points_iou_matrix
from .losses import corner_loss, smooth_l1, softmax_cross_entropy

FAULTS = ("bev_iou_sign",)
SUITES = ("iou_oracle", "points_iou_oracle", "encode_decode", "loss")


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _random_boxes(rng, n):
    out = np.zeros((n, 7))
    out[:, 0] = rng.uniform(-2, 2, n)
    out[:, 2] = rng.uniform(-2, 2, n)
    out[:, 3] = rng.uniform(0.5, 5, n)
    out[:, 4] = 1.0
    out[:, 5] = rng.uniform(0.5, 5, n)
    out[:, 6] = rng.uniform(-math.pi, math.pi, n)
    return out


def _row_interval(box, zs):
    """x-extent [lo, hi] of a BEV rectangle on each horizontal line z."""
    x, _, z, l, _, w, yaw = box
    # local u along (cos, -sin), v along (sin, cos); |u| <= l/2, |v| <= w/2
    c, s = math.cos(yaw), math.sin(yaw)
    lo = np.full(len(zs), -np.inf)
    hi = np.full(len(zs), np.inf)
    dz = zs - z
    for ax, az, half in ((c, -s, l / 2), (s, c, w / 2)):
        # |ax * dx + az * dz| <= half
        if abs(ax) < 1e-15:
            bad = np.abs(az * dz) > half
            lo[bad], hi[bad] = np.inf, -np.inf
            continue
        a = (-half - az * dz) / ax
        b = (half - az * dz) / ax
        lo = np.maximum(lo, np.minimum(a, b) + x)
        hi = np.minimum(hi, np.maximum(a, b) + x)
    return lo, hi


def scanline_iou(a, b, rows=4000):
    """BEV IoU by midpoint integration of per-row interval lengths."""
    def z_span(box):
        r = 0.5 * math.hypot(box[3], box[5])
        return box[2] - r, box[2] + r
    z0 = min(z_span(a)[0], z_span(b)[0])
    z1 = max(z_span(a)[1], z_span(b)[1])
    dz = (z1 - z0) / rows
    zs = z0 + (np.arange(rows) + 0.5) * dz
    la, ha = _row_interval(a, zs)
    lb, hb = _row_interval(b, zs)
    inter = np.clip(np.minimum(ha, hb) - np.maximum(la, lb), 0, None).sum() * dz
    union = a[3] * a[5] + b[3] * b[5] - inter
    return inter / union


def check_iou(faults=(), n=200, tol=2e-3, seed=0):
    rng = np.random.default_rng(seed)
    a, b = _random_boxes(rng, n), _random_boxes(rng, n)
    b_used = b.copy()
    if "bev_iou_sign" in faults:
        b_used[:, 6] = -b_used[:, 6]
    worst = 0.0
    for i in range(n):
        got = bev_iou_matrix(a[i:i + 1], b_used[i:i + 1])[0, 0]
        worst = max(worst, abs(got - scanline_iou(a[i], b[i])))
    return worst <= tol, f"max |iou - oracle| = {worst:.2e} over {n} pairs (tol {tol:g})"


def _membership(xyz, box):
    x, y, z, l, h, w, yaw = box
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    local = np.linalg.solve(rot, (xyz - [x, y, z]).T).T
    half = np.array([l, h, w]) / 2 + 1e-9
    return np.all(np.abs(local) <= half, axis=1)


def check_points_iou(faults=(), n_scenes=30, seed=1):
    rng = np.random.default_rng(seed)
    for k in range(n_scenes):
        xyz = rng.uniform([-4, -1, -4], [4, 1, 4], (int(rng.integers(1, 400)), 3))
        props = _random_boxes(rng, int(rng.integers(1, 20)))
        gts = _random_boxes(rng, int(rng.integers(1, 5)))
        got = points_iou_matrix(xyz, props, gts)
        mp = [_membership(xyz, p) for p in props]
        mg = [_membership(xyz, g) for g in gts]
        for i, a in enumerate(mp):
            for j, b in enumerate(mg):
                union = np.count_nonzero(a | b)
                want = np.count_nonzero(a & b) / union if union else 0.0
                if got[i, j] != want:
                    return False, f"scene {k} pair ({i},{j}): {got[i, j]} != {want}"
    return True, f"exact on {n_scenes} scenes"


def check_encode_decode(faults=(), n=1000, seed=2, num_bins=12):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        p = Box3D(rng.uniform(-30, 30, 3), rng.uniform(0.5, 5, 3), rng.uniform(-math.pi, math.pi))
        g = Box3D(rng.uniform(-30, 30, 3), rng.uniform(0.5, 5, 3), rng.uniform(-math.pi, math.pi))
        t = rng.normal(0, 1, 3)
        d = decode_box(p, PredictionVector.from_target(encode_targets(p, t, g, num_bins), t,
                                                       num_bins))
        dyaw = abs(math.remainder(d.yaw - g.yaw, 2 * math.pi))
        worst = max(worst, np.abs(np.subtract(d.center, g.center)).max(),
                    np.abs(np.subtract(d.size, g.size)).max(), dyaw)
    return worst <= 1e-9, f"max round-trip error {worst:.2e} over {n} pairs"


def _rel_err(fd, g):
    return abs(fd - g) / max(abs(fd), abs(g), 1e-6)


def check_loss(faults=(), n=300, seed=3, h=1e-5):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        x = rng.normal(0, 2, 5)
        x = x[np.abs(np.abs(x) - 1) > 1e-3]
        _, g = smooth_l1(x)
        for i in range(len(x)):
            e = np.zeros(len(x))
            e[i] = h
            fd = (smooth_l1(x + e)[0] - smooth_l1(x - e)[0]) / (2 * h)
            worst = max(worst, _rel_err(fd, g[i]))
        z = rng.normal(0, 3, 4)
        label = int(rng.integers(4))
        _, g = softmax_cross_entropy(z, label)
        for i in range(4):
            e = np.zeros(4)
            e[i] = h
            fd = (softmax_cross_entropy(z + e, label)[0]
                  - softmax_cross_entropy(z - e, label)[0]) / (2 * h)
            worst = max(worst, _rel_err(fd, g[i]))
    box = Box3D((0.0, 0.0, 0.0), (3.9, 1.6, 1.6), 0.3)
    shifted = box.replace(center=(1.0, 0.0, 0.0))
    corner = corner_loss(shifted, box)
    ok = worst <= 1e-4 and corner == 8.0
    return ok, f"max gradient rel. error {worst:.2e}; corner loss {corner!r}"


CHECKS = {
    "iou_oracle": check_iou,
    "points_iou_oracle": check_points_iou,
    "encode_decode": check_encode_decode,
    "loss": check_loss,
}


def run_selftest(faults=()):
    unknown = set(faults) - set(FAULTS)
    if unknown:
        raise ValueError(f"unknown faults {sorted(unknown)}; available: {FAULTS}")
    results = []
    for name in SUITES:
        t = time.perf_counter()
        passed, detail = CHECKS[name](faults)
        results.append(SuiteResult(name, bool(passed), detail, time.perf_counter() - t))
    return results
