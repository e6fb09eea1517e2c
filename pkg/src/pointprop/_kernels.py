"""Compiled inner loops for box geometry over large point / box sets.

Boxes are float64 rows ``[x, y, z, l, h, w, yaw]`` in camera coordinates.
Kernels are serial and release the GIL; parallelism happens across frames.
"""
import numba as nb
import numpy as np

# Slack on the closed-box containment test.
CONTAIN_EPS = 1e-9
# Slack on half-plane tests during convex clipping.
CLIP_EPS = 1e-9

_jit = nb.njit(cache=True, nogil=True)


@nb.njit(cache=True, nogil=True, inline="always")
def inside_box(px, py, pz, cx, cy, cz, hl, hh, hw, c, s):
    dx = px - cx
    dz = pz - cz
    lx = c * dx - s * dz
    lz = s * dx + c * dz
    return (
        abs(lx) <= hl + CONTAIN_EPS
        and abs(py - cy) <= hh + CONTAIN_EPS
        and abs(lz) <= hw + CONTAIN_EPS
    )


@_jit
def points_in_box_mask(points, box):
    n = points.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    c = np.cos(box[6])
    s = np.sin(box[6])
    hl = 0.5 * box[3]
    hh = 0.5 * box[4]
    hw = 0.5 * box[5]
    for i in range(n):
        out[i] = inside_box(points[i, 0], points[i, 1], points[i, 2],
                            box[0], box[1], box[2], hl, hh, hw, c, s)
    return out


@nb.njit(cache=True, nogil=True, inline="always")
def _bev_corners(cx, cz, l, w, yaw, out):
    # CCW in the (x, z) plane starting at local (+l/2, +w/2)
    c = np.cos(yaw)
    s = np.sin(yaw)
    hl = 0.5 * l
    hw = 0.5 * w
    sx = (1.0, -1.0, -1.0, 1.0)
    sz = (1.0, 1.0, -1.0, -1.0)
    for k in range(4):
        lx = sx[k] * hl
        lz = sz[k] * hw
        out[k, 0] = cx + c * lx + s * lz
        out[k, 1] = cz - s * lx + c * lz


@_jit
def bev_corners_batch(boxes):
    n = boxes.shape[0]
    out = np.empty((n, 4, 2))
    for i in range(n):
        _bev_corners(boxes[i, 0], boxes[i, 2], boxes[i, 3], boxes[i, 5],
                     boxes[i, 6], out[i])
    return out


@_jit
def convex_intersection_area(a, b):
    """Area of the intersection of convex CCW polygons ``a`` (n, 2) and ``b`` (m, 2)."""
    cap = a.shape[0] + b.shape[0] + 2
    cur = np.empty((cap * 2, 2))
    nxt = np.empty((cap * 2, 2))
    side = np.empty(cap * 2)
    n = a.shape[0]
    for k in range(n):
        cur[k, 0] = a[k, 0]
        cur[k, 1] = a[k, 1]
    m = b.shape[0]
    for e in range(m):
        if n == 0:
            break
        p1x = b[e, 0]
        p1y = b[e, 1]
        p2x = b[(e + 1) % m, 0]
        p2y = b[(e + 1) % m, 1]
        dx = p2x - p1x
        dy = p2y - p1y
        for k in range(n):
            side[k] = dx * (cur[k, 1] - p1y) - dy * (cur[k, 0] - p1x)
        cnt = 0
        for k in range(n):
            j = (k + n - 1) % n
            s_in = side[j] >= -CLIP_EPS
            e_in = side[k] >= -CLIP_EPS
            if e_in:
                if not s_in:
                    t = side[j] / (side[j] - side[k])
                    nxt[cnt, 0] = cur[j, 0] + t * (cur[k, 0] - cur[j, 0])
                    nxt[cnt, 1] = cur[j, 1] + t * (cur[k, 1] - cur[j, 1])
                    cnt += 1
                nxt[cnt, 0] = cur[k, 0]
                nxt[cnt, 1] = cur[k, 1]
                cnt += 1
            elif s_in:
                t = side[j] / (side[j] - side[k])
                nxt[cnt, 0] = cur[j, 0] + t * (cur[k, 0] - cur[j, 0])
                nxt[cnt, 1] = cur[j, 1] + t * (cur[k, 1] - cur[j, 1])
                cnt += 1
        for k in range(cnt):
            cur[k, 0] = nxt[k, 0]
            cur[k, 1] = nxt[k, 1]
        n = cnt
    if n < 3:
        return 0.0
    area = 0.0
    for k in range(n):
        j = (k + 1) % n
        area += cur[k, 0] * cur[j, 1] - cur[j, 0] * cur[k, 1]
    area *= 0.5
    return area if area > 0.0 else 0.0


@nb.njit(cache=True, nogil=True, inline="always")
def _aabb(corners, out):
    out[0] = min(corners[0, 0], corners[1, 0], corners[2, 0], corners[3, 0])
    out[1] = min(corners[0, 1], corners[1, 1], corners[2, 1], corners[3, 1])
    out[2] = max(corners[0, 0], corners[1, 0], corners[2, 0], corners[3, 0])
    out[3] = max(corners[0, 1], corners[1, 1], corners[2, 1], corners[3, 1])


@_jit
def bev_iou_pairs(boxes_a, boxes_b):
    """Element-wise rotated BEV IoU of two equal-length box arrays."""
    n = boxes_a.shape[0]
    out = np.zeros(n)
    ca = np.empty((4, 2))
    cb = np.empty((4, 2))
    for i in range(n):
        a = boxes_a[i]
        b = boxes_b[i]
        _bev_corners(a[0], a[2], a[3], a[5], a[6], ca)
        _bev_corners(b[0], b[2], b[3], b[5], b[6], cb)
        inter = convex_intersection_area(ca, cb)
        union = a[3] * a[5] + b[3] * b[5] - inter
        out[i] = inter / union if union > 0.0 else 0.0
    return out


@_jit
def bev_inter_matrix(boxes_a, boxes_b):
    """Pairwise rotated BEV intersection areas."""
    na = boxes_a.shape[0]
    nb_ = boxes_b.shape[0]
    out = np.zeros((na, nb_))
    ca = bev_corners_batch(boxes_a)
    cb = bev_corners_batch(boxes_b)
    ba = np.empty((na, 4))
    bb = np.empty((nb_, 4))
    for i in range(na):
        _aabb(ca[i], ba[i])
    for j in range(nb_):
        _aabb(cb[j], bb[j])
    for i in range(na):
        for j in range(nb_):
            if (ba[i, 0] > bb[j, 2] or bb[j, 0] > ba[i, 2]
                    or ba[i, 1] > bb[j, 3] or bb[j, 1] > ba[i, 3]):
                continue
            out[i, j] = convex_intersection_area(ca[i], cb[j])
    return out


@_jit
def nms_rotated(boxes, order, threshold, max_keep):
    """Greedy BEV NMS visiting boxes in ``order``; returns kept row indices."""
    k = order.shape[0]
    corners = bev_corners_batch(boxes)
    aabb = np.empty((boxes.shape[0], 4))
    for i in range(boxes.shape[0]):
        _aabb(corners[i], aabb[i])
    suppressed = np.zeros(boxes.shape[0], dtype=np.bool_)
    keep = np.empty(min(k, max_keep), dtype=np.int64)
    nk = 0
    for ii in range(k):
        i = order[ii]
        if suppressed[i]:
            continue
        keep[nk] = i
        nk += 1
        if nk >= max_keep:
            break
        area_i = boxes[i, 3] * boxes[i, 5]
        for jj in range(ii + 1, k):
            j = order[jj]
            if suppressed[j]:
                continue
            if (aabb[i, 0] > aabb[j, 2] or aabb[j, 0] > aabb[i, 2]
                    or aabb[i, 1] > aabb[j, 3] or aabb[j, 1] > aabb[i, 3]):
                continue
            inter = convex_intersection_area(corners[i], corners[j])
            union = area_i + boxes[j, 3] * boxes[j, 5] - inter
            if union > 0.0 and inter / union > threshold:
                suppressed[j] = True
    return keep[:nk]


# ---------------------------------------------------------------------------
# Uniform x-z grid over a point set. Points are stored sorted by cell id and,
# within a cell, by original index, so every scan visits a given point subset
# in the same order regardless of which box triggered the scan.


@nb.njit(cache=True, nogil=True, inline="always")
def _cell_range(box, lo_x, lo_z, cell, nx, nz, out):
    c = abs(np.cos(box[6]))
    s = abs(np.sin(box[6]))
    ex = 0.5 * (c * box[3] + s * box[5]) + 1e-6
    ez = 0.5 * (s * box[3] + c * box[5]) + 1e-6
    x0 = int(np.floor((box[0] - ex - lo_x) / cell))
    x1 = int(np.floor((box[0] + ex - lo_x) / cell))
    z0 = int(np.floor((box[2] - ez - lo_z) / cell))
    z1 = int(np.floor((box[2] + ez - lo_z) / cell))
    out[0] = max(x0, 0)
    out[1] = min(x1, nx - 1)
    out[2] = max(z0, 0)
    out[3] = min(z1, nz - 1)


@_jit
def box_stats(boxes, pts, weights, cell_start, lo_x, lo_z, cell, nx, nz):
    """Per box: interior count, coordinate sums (3) and weight sum."""
    n = boxes.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    sums = np.zeros((n, 3))
    wsum = np.zeros(n)
    rng = np.empty(4, dtype=np.int64)
    for b in range(n):
        box = boxes[b]
        c = np.cos(box[6])
        s = np.sin(box[6])
        hl = 0.5 * box[3]
        hh = 0.5 * box[4]
        hw = 0.5 * box[5]
        _cell_range(box, lo_x, lo_z, cell, nx, nz, rng)
        for ix in range(rng[0], rng[1] + 1):
            for iz in range(rng[2], rng[3] + 1):
                cid = ix * nz + iz
                for p in range(cell_start[cid], cell_start[cid + 1]):
                    if inside_box(pts[p, 0], pts[p, 1], pts[p, 2], box[0], box[1],
                                  box[2], hl, hh, hw, c, s):
                        counts[b] += 1
                        sums[b, 0] += pts[p, 0]
                        sums[b, 1] += pts[p, 1]
                        sums[b, 2] += pts[p, 2]
                        wsum[b] += weights[p]
    return counts, sums, wsum


@_jit
def align_boxes(boxes, anchors, pts, weights, cell_start, lo_x, lo_z, cell, nx, nz,
                max_iter):
    """Re-center boxes on their interior centroid with anchor sizes.

    Iterates until the interior set is unchanged by re-centering or
    ``max_iter`` re-centerings were applied. Returns the aligned boxes,
    interior counts, interior weight sums and a validity flag (False when an
    interior set became empty).
    """
    n = boxes.shape[0]
    out = boxes.copy()
    counts = np.zeros(n, dtype=np.int64)
    wsum = np.zeros(n)
    ok = np.zeros(n, dtype=np.bool_)
    rng = np.empty(4, dtype=np.int64)
    for b in range(n):
        prev = boxes[b].copy()
        c = np.cos(prev[6])
        s = np.sin(prev[6])
        cnt = 0
        sx = 0.0
        sy = 0.0
        sz = 0.0
        hl = 0.5 * prev[3]
        hh = 0.5 * prev[4]
        hw = 0.5 * prev[5]
        _cell_range(prev, lo_x, lo_z, cell, nx, nz, rng)
        for ix in range(rng[0], rng[1] + 1):
            for iz in range(rng[2], rng[3] + 1):
                cid = ix * nz + iz
                for p in range(cell_start[cid], cell_start[cid + 1]):
                    if inside_box(pts[p, 0], pts[p, 1], pts[p, 2], prev[0], prev[1],
                                  prev[2], hl, hh, hw, c, s):
                        cnt += 1
                        sx += pts[p, 0]
                        sy += pts[p, 1]
                        sz += pts[p, 2]
        if cnt == 0:
            continue
        cur = prev.copy()
        cur[3] = anchors[b, 0]
        cur[4] = anchors[b, 1]
        cur[5] = anchors[b, 2]
        w = 0.0
        for _ in range(max_iter):
            cur[0] = sx / cnt
            cur[1] = sy / cnt
            cur[2] = sz / cnt
            nhl = 0.5 * cur[3]
            nhh = 0.5 * cur[4]
            nhw = 0.5 * cur[5]
            ncnt = 0
            both = 0
            nsx = 0.0
            nsy = 0.0
            nsz = 0.0
            w = 0.0
            _cell_range(cur, lo_x, lo_z, cell, nx, nz, rng)
            for ix in range(rng[0], rng[1] + 1):
                for iz in range(rng[2], rng[3] + 1):
                    cid = ix * nz + iz
                    for p in range(cell_start[cid], cell_start[cid + 1]):
                        if inside_box(pts[p, 0], pts[p, 1], pts[p, 2], cur[0], cur[1],
                                      cur[2], nhl, nhh, nhw, c, s):
                            ncnt += 1
                            nsx += pts[p, 0]
                            nsy += pts[p, 1]
                            nsz += pts[p, 2]
                            w += weights[p]
                            if inside_box(pts[p, 0], pts[p, 1], pts[p, 2], prev[0],
                                          prev[1], prev[2], hl, hh, hw, c, s):
                                both += 1
            stable = both == cnt and ncnt == cnt
            prev[:] = cur
            hl = nhl
            hh = nhh
            hw = nhw
            cnt = ncnt
            sx = nsx
            sy = nsy
            sz = nsz
            if stable or cnt == 0:
                break
        if cnt == 0:
            continue
        out[b] = cur
        counts[b] = cnt
        wsum[b] = w
        ok[b] = True
    return out, counts, wsum, ok


@_jit
def box_members(boxes, pts, order, cell_start, lo_x, lo_z, cell, nx, nz):
    """CSR (ptr, idx) of original point indices inside each box, ascending."""
    n = boxes.shape[0]
    rng = np.empty(4, dtype=np.int64)
    ptr = np.zeros(n + 1, dtype=np.int64)
    # two passes: count then fill
    for pass_ in range(2):
        if pass_ == 1:
            for b in range(n):
                ptr[b + 1] += ptr[b]
            idx = np.empty(ptr[n], dtype=np.int64)
        else:
            idx = np.empty(0, dtype=np.int64)
        for b in range(n):
            box = boxes[b]
            c = np.cos(box[6])
            s = np.sin(box[6])
            hl = 0.5 * box[3]
            hh = 0.5 * box[4]
            hw = 0.5 * box[5]
            k = ptr[b]
            cnt = 0
            _cell_range(box, lo_x, lo_z, cell, nx, nz, rng)
            for ix in range(rng[0], rng[1] + 1):
                for iz in range(rng[2], rng[3] + 1):
                    cid = ix * nz + iz
                    for p in range(cell_start[cid], cell_start[cid + 1]):
                        if inside_box(pts[p, 0], pts[p, 1], pts[p, 2], box[0], box[1],
                                      box[2], hl, hh, hw, c, s):
                            if pass_ == 1:
                                idx[k + cnt] = order[p]
                            cnt += 1
            if pass_ == 0:
                ptr[b + 1] = cnt
            else:
                idx[k:k + cnt] = np.sort(idx[k:k + cnt])
    return ptr, idx


@_jit
def box_overlap_counts(boxes, pts, membership, cell_start, lo_x, lo_z, cell, nx, nz):
    """Per box: interior count and, per reference set g, |interior ∩ set g|.

    ``membership`` is (P, G) boolean in grid order.
    """
    n = boxes.shape[0]
    g = membership.shape[1]
    counts = np.zeros(n, dtype=np.int64)
    inter = np.zeros((n, g), dtype=np.int64)
    rng = np.empty(4, dtype=np.int64)
    for b in range(n):
        box = boxes[b]
        c = np.cos(box[6])
        s = np.sin(box[6])
        hl = 0.5 * box[3]
        hh = 0.5 * box[4]
        hw = 0.5 * box[5]
        _cell_range(box, lo_x, lo_z, cell, nx, nz, rng)
        for ix in range(rng[0], rng[1] + 1):
            for iz in range(rng[2], rng[3] + 1):
                cid = ix * nz + iz
                for p in range(cell_start[cid], cell_start[cid + 1]):
                    if inside_box(pts[p, 0], pts[p, 1], pts[p, 2], box[0], box[1],
                                  box[2], hl, hh, hw, c, s):
                        counts[b] += 1
                        for k in range(g):
                            if membership[p, k]:
                                inter[b, k] += 1
    return counts, inter
