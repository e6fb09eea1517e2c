import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import contains
from pointprop.errors import PlacementError
from pointprop.evaluation import (
    TIERS, Detection, SceneSpec, average_precision, compute_ap, compute_recall,
    evaluate_frames, generate_scene, in_tier, match_detections,
)
from pointprop.geometry import Box3D
from pointprop.kitti_io import GroundTruthLabel

CAR = (3.9, 1.6, 1.6)


def cars(n, spacing=10.0):
    return [Box3D((spacing * i, 1, 20), CAR, 0.0) for i in range(n)]


def scripted_ap11(scores, tp, n_gt):
    """11-point interpolated AP written out directly."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    prec, rec, hits = [], [], 0
    for k, i in enumerate(order, 1):
        hits += tp[i]
        prec.append(hits / k)
        rec.append(hits / n_gt)
    total = 0.0
    for r in [i / 10 for i in range(11)]:
        total += max([p for p, q in zip(prec, rec) if q >= r - 1e-12], default=0.0)
    return total / 11


def test_oracle_detections_ap_one():
    gts = cars(4)
    dets = [Detection(b, 0.9) for b in gts]
    assert compute_ap(dets, gts) == 1.0
    assert compute_ap(dets, gts, num_points=40) == 1.0
    assert compute_ap(dets, gts, iou_kind="bev") == 1.0


def test_no_matches_ap_zero():
    gts = cars(3)
    dets = [Detection(b.replace(center=(b.center[0], 1, 60)), 0.5) for b in gts]
    assert compute_ap(dets, gts) == 0.0
    assert compute_ap([], gts) == 0.0


def test_no_ground_truth():
    assert average_precision([], [], 0) == 1.0
    assert average_precision([0.5], [False], 0) == 0.0


def test_hand_built_precision_recall():
    gts = cars(3)
    far = Box3D((0, 1, 70), CAR, 0.0)
    dets = [Detection(gts[0], 0.9), Detection(far, 0.8), Detection(gts[1], 0.7),
            Detection(gts[1], 0.6), Detection(gts[2], 0.5)]
    # the second hit on gts[1] is a false positive
    s, tp = match_detections([d.box for d in dets], [d.score for d in dets], gts, 0.7)
    assert tp.tolist() == [True, False, True, False, True]
    got = compute_ap(dets, gts)
    assert got == pytest.approx(scripted_ap11([0.9, 0.8, 0.7, 0.6, 0.5], [1, 0, 1, 0, 1], 3))
    assert got == pytest.approx(8.4 / 11)


def test_forty_point_variant():
    got = average_precision([0.9, 0.8], [True, False], 2, num_points=40)
    assert got == pytest.approx(20 / 40)
    with pytest.raises(ValueError):
        average_precision([0.9], [True], 1, num_points=7)


@given(st.integers(0, 2 ** 31 - 1))
def test_ap_matches_scripted(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 30))
    scores = rng.uniform(0, 1, n)
    tp = rng.random(n) < 0.5
    n_gt = max(int(tp.sum()) + int(rng.integers(0, 3)), 1)
    assert average_precision(scores, tp, n_gt) == pytest.approx(
        scripted_ap11(list(scores), list(tp), n_gt))


@given(st.integers(0, 2 ** 31 - 1))
def test_ap_non_increasing_in_threshold(seed):
    rng = np.random.default_rng(seed)
    gts = cars(4)
    dets = [Detection(Box3D(np.add(g.center, rng.normal(0, 0.3, 3)), g.size,
                            g.yaw + rng.normal(0, 0.1)), float(rng.uniform()))
            for g in gts for _ in range(2)]
    aps = [compute_ap(dets, gts, t) for t in (0.3, 0.5, 0.7, 0.9)]
    assert all(a >= b - 1e-12 for a, b in zip(aps, aps[1:]))


def test_recall_examples():
    gts = cars(2)
    assert compute_recall([], gts, criterion="box_iou_3d") == 0.0
    assert compute_recall(gts, [], criterion="box_iou_3d") == 1.0
    assert compute_recall(gts[:1], gts, criterion="box_iou_3d") == 0.5
    assert compute_recall(gts, gts, criterion="box_iou_bev") == 1.0
    with pytest.raises(ValueError):
        compute_recall(gts, gts, criterion="points_iou")
    with pytest.raises(ValueError):
        compute_recall(gts, gts, criterion="nope")


@given(st.integers(0, 2 ** 31 - 1))
def test_recall_monotone(seed):
    rng = np.random.default_rng(seed)
    cloud, gts = generate_scene(SceneSpec(n_objects=(3, 3), background_points=50,
                                          points_per_object=(30, 60), seed=seed % 1000))
    props = [Box3D(np.add(g.center, rng.normal(0, 1, 3)), g.size, g.yaw + rng.normal(0, 0.3))
             for g in gts for _ in range(3)]
    for crit in ("points_iou", "box_iou_3d"):
        r = [compute_recall(props[:k], gts, cloud, crit) for k in range(len(props) + 1)]
        assert all(a <= b for a, b in zip(r, r[1:]))
        lo, hi = compute_recall(props, gts, cloud, crit, 0.7), compute_recall(props, gts, cloud,
                                                                               crit, 0.3)
        assert lo <= hi


# -- tiers -----------------------------------------------------------------------------


def label(height, occ=0, trunc=0.0, cls="Car", box=None):
    return GroundTruthLabel(cls, box or cars(1)[0], trunc, occ, 0.0, (0, 100, 50, 100 + height))


def test_tier_table():
    assert TIERS["easy"] == (40.0, 0, 0.15)
    assert TIERS["moderate"] == (25.0, 1, 0.30)
    assert TIERS["hard"] == (25.0, 2, 0.50)


def test_in_tier():
    assert in_tier(label(40), "easy") and not in_tier(label(39.9), "easy")
    assert in_tier(label(30, occ=1), "moderate") and not in_tier(label(30, occ=1), "easy")
    assert in_tier(label(30, occ=2, trunc=0.5), "hard")
    assert not in_tier(label(30, occ=2, trunc=0.51), "hard")
    assert in_tier(label(1, occ=3), None)


def test_evaluate_frames_ignores_out_of_tier():
    boxes = cars(2)
    labels = [label(50, box=boxes[0]), label(30, occ=1, box=boxes[1])]
    dets = [Detection(b, 0.8) for b in boxes]
    # the moderate-only car neither helps nor hurts easy AP
    assert evaluate_frames([(dets, labels)], "Car", 0.7, tier="easy") == 1.0
    assert evaluate_frames([(dets[:1], labels)], "Car", 0.7, tier="moderate") < 1.0
    # no pedestrians on either side: nothing to miss
    assert evaluate_frames([(dets, labels)], "Pedestrian", 0.5) == 1.0


def test_detection_score_range():
    with pytest.raises(ValueError):
        Detection(cars(1)[0], 1.5)


# -- scenes ----------------------------------------------------------------------------


def test_scene_empty():
    cloud, boxes = generate_scene(SceneSpec(n_objects=(0, 0), background_points=30))
    assert boxes == [] and len(cloud) == 30 and not cloud.scores.any()


def test_scene_deterministic():
    a = generate_scene(SceneSpec(seed=9))
    b = generate_scene(SceneSpec(seed=9))
    assert a[0].points.tobytes() == b[0].points.tobytes() and a[1] == b[1]


def test_scene_placement_error():
    with pytest.raises(PlacementError):
        generate_scene(SceneSpec(n_objects=(30, 30), x_range=(0, 5), z_range=(0, 5)))


@given(st.integers(0, 500))
def test_scene_contents(seed):
    spec = SceneSpec(n_objects=(2, 5), points_per_object=(20, 40), background_points=100,
                     seed=seed)
    cloud, boxes = generate_scene(spec)
    assert 2 <= len(boxes) <= 5
    fg = cloud.scores >= 0.5
    for p, is_fg in zip(cloud.xyz, fg):
        inside = [contains(b.to_array(), p) for b in boxes]
        assert any(inside) == bool(is_fg)
    for b in boxes:
        assert b.center[1] + b.size[1] / 2 == pytest.approx(spec.ground_y)
