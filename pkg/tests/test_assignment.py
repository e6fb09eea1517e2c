import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import brute_points_iou
from pointprop.assignment import (
    IGNORED, NEGATIVE, POSITIVE, TargetAssignment, assign_arrays, assign_targets,
    label_points_iou, sample_minibatch,
)
from pointprop.errors import InsufficientProposalsError
from pointprop.geometry import Box3D, iou_3d

CAR = (3.9, 1.6, 1.6)


def row_points(n):
    # n points spread along x inside a unit box at the origin
    return np.column_stack([np.linspace(-0.45, 0.45, n), np.zeros(n), np.zeros(n)])


def test_labels_at_threshold():
    got = label_points_iou([0.6, 0.55, 0.549, 0.0, 1.0], 0.55, 0.55)
    assert got.tolist() == [POSITIVE, NEGATIVE, NEGATIVE, NEGATIVE, POSITIVE]


def test_labels_ignored_band():
    got = label_points_iou([0.2, 0.3, 0.5, 0.6], 0.5, 0.3)
    assert got.tolist() == [NEGATIVE, IGNORED, IGNORED, POSITIVE]


def test_positive_at_six_tenths():
    gt = Box3D((0, 0, 0), (1, 1, 1), 0.0)
    pts = row_points(10)  # x = -0.45, -0.35, ..., 0.45
    prop = Box3D((0.2, 0, 0), (0.55, 1, 1), 0.0)  # x in [-0.075, 0.475]: 6 points
    a = assign_targets([prop], [gt], pts, 0.55, 0.55)[0]
    assert a.points_iou == pytest.approx(0.6)
    assert a.label == POSITIVE and a.matched_gt == 0 and a.is_positive


def test_exactly_threshold_is_negative():
    gt = Box3D((0, 0, 0), (1, 1, 1), 0.0)
    pts = row_points(20)
    # left edge between points 8 and 9: covers 11 of 20
    lo = (pts[8, 0] + pts[9, 0]) / 2
    prop = Box3D(((lo + 0.6) / 2, 0, 0), (0.6 - lo, 1, 1), 0.0)
    a = assign_targets([prop], [gt], pts, 0.55, 0.55)[0]
    assert a.points_iou == 0.55
    assert a.label == NEGATIVE and a.matched_gt is None


def test_no_ground_truth_all_negative():
    pts = row_points(5)
    props = [Box3D((0, 0, 0), (1, 1, 1), 0.0)] * 3
    labels, matched, ious = assign_arrays(props, [], pts)
    assert labels.tolist() == [NEGATIVE] * 3
    assert matched.tolist() == [-1] * 3 and ious.tolist() == [0.0] * 3


def test_points_beat_box_iou_for_partial_observation():
    gt = Box3D((0, 0, 0), CAR, 0.0)
    rng = np.random.default_rng(0)
    # only the rear half of the car is observed
    pts = rng.uniform([-1.9, -0.75, -0.75], [0.0, 0.75, 0.75], (300, 3))
    prop = gt.replace(center=(-1.5, 0, 0))
    assert iou_3d(prop, gt) == pytest.approx(2.4 / 5.4)
    a = assign_targets([prop], [gt], pts, 0.55, 0.55)[0]
    assert a.points_iou == 1.0 and a.label == POSITIVE


def test_matched_gt_skips_unmatchable():
    class G:
        def __init__(self, box, matchable):
            self.box, self.matchable = box, matchable

    box = Box3D((0, 0, 0), (1, 1, 1), 0.0)
    pts = row_points(4)
    gts = [G(box, False), G(box, True)]
    a = assign_targets([box], gts, pts)[0]
    assert a.matched_gt == 1


def test_threshold_validation():
    with pytest.raises(ValueError):
        assign_arrays([], [], np.zeros((0, 3)), 0.4, 0.5)


@given(st.integers(0, 2 ** 31 - 1))
def test_agrees_with_brute_force(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-3, 3, (int(rng.integers(1, 120)), 3))

    def rand_box():
        return Box3D(rng.uniform(-2, 2, 3), rng.uniform(0.5, 3, 3), rng.uniform(-3.1, 3.1))

    props = [rand_box() for _ in range(6)]
    gts = [rand_box() for _ in range(3)]
    out = assign_targets(props, gts, pts, 0.5, 0.5)
    for i, a in enumerate(out):
        ious = [brute_points_iou(pts, props[i].to_array(), g.to_array()) for g in gts]
        assert a.points_iou == pytest.approx(max(ious), abs=1e-12)
        assert a.label == (POSITIVE if max(ious) > 0.5 else NEGATIVE)
        if a.label == POSITIVE:
            assert a.matched_gt == int(np.argmax(ious))


# -- minibatch -----------------------------------------------------------------------


def fake(n_pos, n_neg, n_ign=0):
    labels = [POSITIVE] * n_pos + [NEGATIVE] * n_neg + [IGNORED] * n_ign
    return [TargetAssignment(i, lab) for i, lab in enumerate(labels)]


def counts(assign, idx):
    labels = np.array([assign[i].label for i in idx])
    return int((labels == POSITIVE).sum()), int((labels == NEGATIVE).sum())


def test_minibatch_quarter_positive():
    a = fake(100, 300)
    idx = sample_minibatch(a, 64, 0.25, 0)
    assert len(idx) == 64 and len(set(idx)) == 64
    assert counts(a, idx) == (16, 48)
    assert np.all(np.diff(idx) > 0)


def test_minibatch_few_positives():
    a = fake(5, 300)
    assert counts(a, sample_minibatch(a, 64, 0.25, 0)) == (5, 59)


def test_minibatch_no_positives():
    a = fake(0, 100)
    assert counts(a, sample_minibatch(a, 64, 0.25, 0)) == (0, 64)


def test_minibatch_few_negatives_topped_up():
    a = fake(100, 10)
    assert counts(a, sample_minibatch(a, 64, 0.25, 0)) == (54, 10)


def test_minibatch_skips_ignored():
    a = fake(10, 60, 500)
    idx = sample_minibatch(a, 64, 0.25, 1)
    assert all(a[i].label != IGNORED for i in idx)


def test_minibatch_insufficient():
    with pytest.raises(InsufficientProposalsError):
        sample_minibatch(fake(10, 20, 100), 64)


def test_minibatch_deterministic():
    a = fake(50, 200)
    assert sample_minibatch(a, 64, 0.25, 9).tolist() == sample_minibatch(a, 64, 0.25, 9).tolist()


def test_minibatch_validation():
    with pytest.raises(ValueError):
        sample_minibatch(fake(1, 1), 0)
    with pytest.raises(ValueError):
        sample_minibatch(fake(1, 1), 2, 1.0)
