import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pointprop.errors import ShapeError
from pointprop.geometry import (
    BevPolygon, Box3D, bev_intersection_matrix, bev_iou, bev_iou_matrix, bev_polygon,
    box_corners, box_from_corners, iou_3d, normalize_angle, point_in_box, points_in_box,
    points_iou, points_iou_matrix, polygon_intersection_area, rotation_y,
)
import oracles

angles = st.floats(-10 * math.pi, 10 * math.pi, allow_nan=False)
sides = st.floats(0.5, 5.0)
coords = st.floats(-3.0, 3.0)


@st.composite
def boxes(draw):
    return Box3D((draw(coords), draw(st.floats(-1, 1)), draw(coords)),
                 (draw(sides), draw(sides), draw(sides)), draw(angles))


def unit_square(cx=0.0, cz=0.0):
    return Box3D((cx, 0.0, cz), (1.0, 1.0, 1.0), 0.0)


# -- Box3D -----------------------------------------------------------------------


def test_box_normalizes_yaw():
    assert Box3D((0, 0, 0), (1, 1, 1), math.pi).yaw == -math.pi
    assert Box3D((0, 0, 0), (1, 1, 1), 3 * math.pi / 2).yaw == pytest.approx(-math.pi / 2)


@pytest.mark.parametrize("size", [(0, 1, 1), (1, -1, 1), (1, 1, float("inf"))])
def test_box_rejects_bad_size(size):
    with pytest.raises(ValueError):
        Box3D((0, 0, 0), size, 0.0)


def test_box_rejects_nonfinite_center():
    with pytest.raises(ValueError):
        Box3D((0, float("nan"), 0), (1, 1, 1), 0.0)


@given(angles)
def test_normalize_angle_range(a):
    n = normalize_angle(a)
    assert -math.pi <= n < math.pi
    assert math.isclose(math.cos(n), math.cos(a), abs_tol=1e-9)
    assert math.isclose(math.sin(n), math.sin(a), abs_tol=1e-9)


def test_box_array_round_trip():
    b = Box3D((1, 2, 3), (4, 5, 6), 0.5)
    assert Box3D.from_array(b.to_array()) == b


# -- corners ---------------------------------------------------------------------


def test_unit_cube_corners_canonical_order():
    c = box_corners(Box3D((0, 0, 0), (1, 1, 1), 0.0))
    want = [(0.5, 0.5, 0.5), (-0.5, 0.5, 0.5), (-0.5, 0.5, -0.5), (0.5, 0.5, -0.5),
            (0.5, -0.5, 0.5), (-0.5, -0.5, 0.5), (-0.5, -0.5, -0.5), (0.5, -0.5, -0.5)]
    np.testing.assert_allclose(c, want, atol=1e-15)


def test_unit_cube_half_turn_same_corner_set():
    a = box_corners(Box3D((0, 0, 0), (1, 1, 1), 0.0))
    b = box_corners(Box3D((0, 0, 0), (1, 1, 1), math.pi))
    key = lambda arr: sorted(map(tuple, np.round(arr, 12)))
    assert key(a) == key(b)


def test_car_corners_match_rotation_oracle():
    box = (10.0, 1.0, 20.0, 3.9, 1.6, 1.6, math.pi / 6)
    got = box_corners(Box3D(box[:3], box[3:6], box[6]))
    np.testing.assert_allclose(got, oracles.corners(box), atol=1e-12)
    # first corner, frozen from the oracle script
    np.testing.assert_allclose(got[0], [12.08874954, 1.8, 19.71782032], atol=1e-8)


@given(boxes())
def test_corners_agree_with_oracle(b):
    np.testing.assert_allclose(box_corners(b), oracles.corners(b.to_array()), atol=1e-9)


@given(coords, coords, coords, sides, sides, sides, st.floats(-1.5, 1.5))
def test_box_from_corners_round_trip(x, y, z, l, h, w, yaw):
    b = Box3D((x, y, z), (l, h, w), yaw)
    r = box_from_corners(box_corners(b))
    np.testing.assert_allclose(r.center, b.center, atol=1e-9)
    np.testing.assert_allclose(r.size, b.size, atol=1e-9)
    assert r.yaw == pytest.approx(b.yaw, abs=1e-9)


def test_rotation_y_orthonormal():
    r = rotation_y(0.7)
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-15)
    assert np.linalg.det(r) == pytest.approx(1.0)


# -- containment -----------------------------------------------------------------


@given(boxes())
def test_center_is_inside(b):
    assert point_in_box(b.center, b)


@given(boxes())
def test_far_point_outside(b):
    r = 0.5 * math.sqrt(b.l ** 2 + b.h ** 2 + b.w ** 2)
    assert not point_in_box(np.asarray(b.center) + [r + 1e-3, 0, 0], b)


@given(boxes(), st.integers(0, 5), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_face_points_inside(b, face, u, v):
    c = box_corners(b)
    # faces as (corner, edge1, edge2) from the canonical order
    faces = [(0, 1, 3), (4, 5, 7), (0, 1, 4), (3, 2, 7), (0, 3, 4), (1, 2, 5)]
    o, e1, e2 = faces[face]
    mid = (c[o] + c[e1] + c[e2] + (c[e1] + c[e2] - c[o])) / 4
    p = mid + u * (c[e1] - c[o]) + v * (c[e2] - c[o])
    assert point_in_box(p, b)


@given(boxes(), st.floats(-math.pi, math.pi), st.tuples(coords, coords, coords),
       st.lists(st.tuples(coords, coords, coords), min_size=1, max_size=20))
def test_containment_rigid_invariance(b, theta, shift, pts):
    pts = np.array(pts)
    r = rotation_y(theta)
    moved = Box3D(r @ np.asarray(b.center) + shift, b.size, b.yaw + theta)
    pts2 = pts @ r.T + shift
    a = points_in_box(pts, b)
    m = points_in_box(pts2, moved)
    # only points within rounding distance of a face may change membership
    box = b.to_array()
    near_face = np.array([oracles.contains(box, p, 1e-9) != oracles.contains(box, p, -1e-9)
                          for p in pts])
    assert np.array_equal(a[~near_face], m[~near_face])


def test_points_in_box_rejects_bad_shape():
    with pytest.raises(ShapeError):
        points_in_box(np.zeros((3, 2)), unit_square())


# -- BEV polygons and IoU -----------------------------------------------------------


def test_bev_polygon_axis_aligned():
    p = bev_polygon(Box3D((0, 0, 0), (2, 1, 1), 0.0))
    assert {tuple(np.round(v, 12)) for v in p.vertices} == {(1, 0.5), (-1, 0.5), (-1, -0.5),
                                                           (1, -0.5)}
    assert p.area == pytest.approx(2.0)


def test_bev_polygon_quarter_turn_swaps_extent():
    p = bev_polygon(Box3D((0, 0, 0), (2, 1, 1), math.pi / 2))
    v = np.asarray(p.vertices)
    assert np.ptp(v[:, 0]) == pytest.approx(1.0)
    assert np.ptp(v[:, 1]) == pytest.approx(2.0)


def test_bev_polygon_diagonal():
    v = np.asarray(bev_polygon(Box3D((0, 0, 0), (1, 1, 1), math.pi / 4)).vertices)
    np.testing.assert_allclose(np.hypot(v[:, 0], v[:, 1]), math.sqrt(2) / 2)
    assert np.abs(v).min() < 1e-12


def test_bev_polygon_rejects_clockwise():
    with pytest.raises(ValueError):
        BevPolygon([(0, 0), (0, 1), (1, 1), (1, 0)])


def test_polygon_intersection_examples():
    a = bev_polygon(unit_square())
    assert polygon_intersection_area(a, a) == pytest.approx(1.0)
    assert polygon_intersection_area(a, bev_polygon(unit_square(5, 5))) == 0.0
    assert polygon_intersection_area(a, bev_polygon(unit_square(0.5))) == pytest.approx(0.5)


def test_bev_iou_examples():
    a = unit_square()
    assert bev_iou(a, a) == pytest.approx(1.0)
    assert bev_iou(a, unit_square(3, 0)) == 0.0
    assert bev_iou(a, unit_square(0.5)) == pytest.approx(1 / 3)


def test_bev_iou_shared_edge_is_zero():
    assert bev_iou(unit_square(), unit_square(1.0)) == pytest.approx(0.0, abs=1e-12)


def test_axis_aligned_flag():
    a = Box3D((0, 0, 0), (2, 1, 2), math.pi / 4)
    assert bev_iou(a, a, axis_aligned=True) == pytest.approx(1.0)
    b = Box3D((0, 0, 0), (2, 1, 1), math.pi / 2)
    c = Box3D((0, 0, 0), (1, 1, 2), 0.0)
    assert bev_iou(b, c, axis_aligned=True) == pytest.approx(1.0)


@given(boxes(), boxes())
def test_bev_iou_symmetric_bounded(a, b):
    ab, ba = bev_iou(a, b), bev_iou(b, a)
    assert ab == pytest.approx(ba, abs=1e-12)
    assert 0.0 <= ab <= 1.0 + 1e-12


@given(boxes(), boxes())
def test_intersection_bounded_by_areas(a, b):
    inter = bev_intersection_matrix([a], [b])[0, 0]
    assert -1e-12 <= inter <= min(a.l * a.w, b.l * b.w) + 1e-9


def test_bev_intersection_matches_scanline_oracle():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(300):
        a = [rng.uniform(-2, 2), 0, rng.uniform(-2, 2), rng.uniform(0.5, 5), 1,
             rng.uniform(0.5, 5), rng.uniform(-math.pi, math.pi)]
        b = [rng.uniform(-2, 2), 0, rng.uniform(-2, 2), rng.uniform(0.5, 5), 1,
             rng.uniform(0.5, 5), rng.uniform(-math.pi, math.pi)]
        got = bev_intersection_matrix(np.array([a]), np.array([b]))[0, 0]
        worst = max(worst, abs(got - oracles.scanline_bev_inter(a, b)))
    assert worst < 1e-3


def test_iou_matrix_shape():
    a = [unit_square(), unit_square(0.5)]
    b = [unit_square(), unit_square(10), unit_square(0.25)]
    m = bev_iou_matrix(a, b)
    assert m.shape == (2, 3)
    assert m[0, 0] == pytest.approx(1.0)
    assert m[1, 1] == 0.0


def test_iou_3d_examples():
    a = unit_square()
    assert iou_3d(a, a) == pytest.approx(1.0)
    assert iou_3d(a, Box3D((0, 2, 0), (1, 1, 1), 0)) == 0.0
    assert iou_3d(a, Box3D((0, 0.5, 0), (1, 1, 1), 0)) == pytest.approx(1 / 3)


# -- PointsIoU -------------------------------------------------------------------


def test_points_iou_examples():
    pts = np.array([[-1.5, 0, 0], [-0.5, 0, 0], [0.5, 0, 0], [1.5, 0, 0]])
    a = Box3D((-0.5, 0, 0), (2.2, 1, 1), 0.0)  # p1..p3
    b = Box3D((0.5, 0, 0), (2.2, 1, 1), 0.0)  # p2..p4
    assert points_iou(pts, a, b) == pytest.approx(0.5)
    assert points_iou(pts, a, a) == 1.0
    c = Box3D((10, 0, 0), (1, 1, 1), 0.0)
    assert points_iou(pts, a, c) == 0.0
    assert points_iou(np.array([[0.0, 5, 0]]), c, c) == 0.0  # empty union


def test_points_iou_disjoint_nonempty():
    pts = np.array([[0.0, 0, 0], [5.0, 0, 0]])
    assert points_iou(pts, unit_square(), unit_square(5.0)) == 0.0


def test_points_iou_matrix_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(20):
        pts = rng.uniform([-4, -1, -4], [4, 1, 4], (int(rng.integers(1, 300)), 3))
        a = np.column_stack([rng.uniform(-2, 2, 8), np.zeros(8), rng.uniform(-2, 2, 8),
                             rng.uniform(0.5, 4, (8, 3)), rng.uniform(-math.pi, math.pi, 8)])
        b = a[rng.permutation(8)[:3]] + [0.3, 0, 0.3, 0, 0, 0, 0.2]
        got = points_iou_matrix(pts, a, b)
        for i in range(8):
            for j in range(3):
                assert got[i, j] == oracles.brute_points_iou(pts, a[i], b[j])


@given(boxes(), boxes(), st.integers(0, 2 ** 31 - 1))
def test_points_iou_symmetric_bounded(a, b, seed):
    pts = np.random.default_rng(seed).uniform(-4, 4, (200, 3))
    ab, ba = points_iou(pts, a, b), points_iou(pts, b, a)
    assert ab == ba
    assert 0.0 <= ab <= 1.0
    if points_in_box(pts, a).any():
        assert points_iou(pts, a, a) == 1.0
