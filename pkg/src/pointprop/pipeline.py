"""Per-frame work behind the CLI commands and the JSONL record formats.

Every output file is JSON lines: a header object carrying ``format`` and
``version``, then one object per proposal. Floats are written with ``repr``
precision so files round-trip exactly, and keys are sorted so identical runs
give identical bytes.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import json
import logging
from pathlib import Path

import numpy as np

from .assignment import IGNORED, POSITIVE, TargetAssignment, assign_arrays, sample_minibatch
from .encoding import encode_targets
from .errors import EmptyCloudError, FrameSetError, InsufficientProposalsError
from .evaluation import Detection, compute_recall, evaluate_frames, in_tier, match_detections
from .geometry import Box3D, iou_3d_matrix
from .kitti_io import (
    frame_path, load_calibration, load_labels, load_mask, load_point_cloud, mask_filter,
    parse_labels, velo_to_camera,
)
from .proposal import ProposalSet, generate_proposals, nms_boxes, select_positive_points

log = logging.getLogger("pointprop")

PROPOSAL_FORMAT = "pointprop.proposals"
TARGET_FORMAT = "pointprop.targets"
FORMAT_VERSION = 1
RECALL_THRESHOLD = 0.5


@dataclass
class FrameResult:
    frame_id: str
    ok: bool
    text: str = None
    summary: dict = field(default_factory=dict)
    error: str = None
    warnings: list = field(default_factory=list)


def frame_rng(seed, frame_id, stream=0):
    """Independent generator per (seed, frame, stream); stable across worker counts."""
    return np.random.default_rng([int(seed), int(frame_id), int(stream)])


def dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_jsonl(header, records):
    return "".join(dumps(r) + "\n" for r in [header, *records])


def read_jsonl(text, expected_format):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty record file")
    header = json.loads(lines[0])
    if header.get("format") != expected_format:
        raise ValueError(f"expected a {expected_format} file, got {header.get('format')!r}")
    if header.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported {expected_format} version {header.get('version')!r}")
    return header, [json.loads(ln) for ln in lines[1:]]


def _floats(a):
    return [float(v) for v in np.asarray(a).reshape(-1)]


def camera_cloud(root, frame_id):
    """Frame cloud in the camera frame, cropped to the image, with mask scores.

    Also returns the indices of the kept points in the velodyne file.
    """
    calib = load_calibration(frame_path(root, "calib", frame_id))
    cloud = load_point_cloud(frame_path(root, "velodyne", frame_id))
    mask = load_mask(frame_path(root, "masks", frame_id))
    cam = velo_to_camera(cloud, calib)
    return mask_filter(cam, mask, calib, threshold=0.0, return_indices=True)


def frame_labels(root, frame_id, classes):
    path = frame_path(root, "label_2", frame_id)
    if not path.exists():
        return None
    return load_labels(path, classes)


def seed_frame(root, frame_id, config):
    """Proposal file contents for one frame."""
    warnings = []
    cropped, kept = camera_cloud(root, frame_id)
    rng = frame_rng(config.seed, frame_id)
    n_fg = int(np.count_nonzero(cropped.scores >= config.fg_threshold)) if len(cropped) else 0
    if n_fg == 0:
        warnings.append(f"frame {frame_id}: mask selects no foreground points")
    try:
        selection = select_positive_points(cropped, config.n_points, rng, config.fg_threshold)
    except EmptyCloudError:
        warnings.append(f"frame {frame_id}: no points project into the image")
        selection = None
    if selection is None:
        selected = np.zeros(0, np.int64)
        proposals = ProposalSet(np.zeros((0, 7)), np.zeros(0, np.int64), np.zeros((0, 3)))
        n_pos = 0
    else:
        selected = kept[selection.indices]
        proposals = generate_proposals(selection, config.anchors, config.nms_thresh,
                                       config.max_keep, config.align_iters,
                                       with_interiors=False)
        n_pos = selection.num_positive
    header = {
        "format": PROPOSAL_FORMAT, "version": FORMAT_VERSION, "frame_id": frame_id,
        "model": config.model, "seed": config.seed, "num_points": int(len(selected)),
        "num_positive": n_pos, "num_proposals": len(proposals),
        "selected": [int(i) for i in selected],
    }
    records = [{
        "index": i,
        "box": _floats(proposals.boxes[i]),
        "anchor": _floats(proposals.anchors[i]),
        "score": float(proposals.scores[i]),
        "seed_index": int(proposals.seed_index[i]),
        "num_interior": int(proposals.counts[i]),
    } for i in range(len(proposals))]
    summary = {"num_positive": n_pos, "num_proposals": len(proposals)}
    labels = frame_labels(root, frame_id, config.classes)
    if labels is not None and selection is not None:
        gts = [lab for lab in labels if lab.matchable]
        summary["num_gt"] = len(gts)
        if gts:
            boxes = [g.box for g in gts]
            summary["recall"] = compute_recall(proposals, boxes, selection.cloud, "points_iou",
                                               RECALL_THRESHOLD)
            summary["recall_box_iou"] = compute_recall(proposals, boxes, None, "box_iou_3d",
                                                       RECALL_THRESHOLD)
    return write_jsonl(header, records), summary, warnings


def read_proposals(text):
    header, records = read_jsonl(text, PROPOSAL_FORMAT)
    n = len(records)
    boxes = np.array([r["box"] for r in records], dtype=np.float64).reshape(n, 7)
    anchors = np.array([r["anchor"] for r in records], dtype=np.float64).reshape(n, 3)
    ps = ProposalSet(boxes, [r["seed_index"] for r in records], anchors,
                     np.array([r["score"] for r in records], dtype=np.float64),
                     np.array([r["num_interior"] for r in records], dtype=np.int64), True)
    return header, ps


def selection_cloud(root, frame_id, header):
    """The point subset that proposals of ``header`` were computed on."""
    calib = load_calibration(frame_path(root, "calib", frame_id))
    cloud = velo_to_camera(load_point_cloud(frame_path(root, "velodyne", frame_id)), calib)
    return cloud.subset(np.asarray(header["selected"], dtype=np.int64))


def assign_frame(root, frame_id, proposal_text, config):
    """Target file contents: labels, minibatch membership and regression targets."""
    warnings = []
    header, proposals = read_proposals(proposal_text)
    if header["frame_id"] != frame_id:
        raise ValueError(f"proposal file is for frame {header['frame_id']}, not {frame_id}")
    labels = frame_labels(root, frame_id, config.classes)
    if labels is None:
        raise FileNotFoundError(f"missing label file for frame {frame_id}")
    gts = [lab for lab in labels if lab.cls in config.classes and lab.box is not None]
    cloud = selection_cloud(root, frame_id, header)
    lab, matched, ious = assign_arrays(proposals, gts, cloud, config.pos_thresh,
                                       config.neg_thresh)
    assignments = [TargetAssignment(i, int(lab[i])) for i in range(len(lab))]
    rng = frame_rng(config.seed, frame_id, 1)
    complete = True
    try:
        batch = sample_minibatch(assignments, config.minibatch_size, config.pos_fraction, rng)
    except InsufficientProposalsError:
        batch = np.flatnonzero(lab != IGNORED)
        complete = False
        warnings.append(f"frame {frame_id}: only {len(batch)} labelled proposals, "
                        f"minibatch of {config.minibatch_size} not filled")
    in_batch = np.zeros(len(lab), bool)
    in_batch[batch] = True
    records = []
    for i in range(len(lab)):
        rec = {"index": i, "label": int(lab[i]), "points_iou": float(ious[i]),
               "matched_gt": int(matched[i]), "in_minibatch": bool(in_batch[i]),
               "target": None}
        if lab[i] == POSITIVE:
            t = encode_targets(Box3D.from_array(proposals.boxes[i]), np.zeros(3),
                               gts[matched[i]].box, config.num_angle_bins)
            rec["target"] = {
                "v_ctr": _floats(t.v_ctr), "v_ctr_star": _floats(t.v_ctr_star),
                "v_size_star": _floats(t.v_size_star), "angle_bin": int(t.angle_bin),
                "angle_residual": float(t.angle_residual),
            }
        records.append(rec)
    out_header = {
        "format": TARGET_FORMAT, "version": FORMAT_VERSION, "frame_id": frame_id,
        "model": config.model, "seed": config.seed, "num_proposals": len(lab),
        "num_gt": len(gts), "num_positive": int(np.count_nonzero(lab == POSITIVE)),
        "num_negative": int(np.count_nonzero(lab == 0)),
        "minibatch": [int(i) for i in batch], "minibatch_complete": complete,
    }
    summary = {"num_proposals": len(lab), "num_positive": out_header["num_positive"],
               "minibatch_positive": int(np.count_nonzero(lab[batch] == POSITIVE))}
    return write_jsonl(out_header, records), summary, warnings


def run_frames(frame_ids, work, out_dir, suffix, workers=1):
    """Apply ``work(frame_id) -> (text, summary, warnings)`` over frames.

    Frames run on a thread pool; each frame writes only its own file, and
    results come back in ``frame_ids`` order regardless of worker count.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(fid):
        try:
            text, summary, warnings = work(fid)
        except Exception as exc:  # noqa: BLE001 - per-frame failures are reported, not raised
            return FrameResult(fid, False, error=f"{type(exc).__name__}: {exc}")
        (out_dir / f"{fid}{suffix}").write_text(text)
        return FrameResult(fid, True, text, summary, warnings=warnings)

    if workers <= 1:
        return [one(f) for f in frame_ids]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, frame_ids))


# -- evaluation -------------------------------------------------------------------

IOU_THRESHOLDS = {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5}
EVAL_TIERS = ("easy", "moderate", "hard")


def stub_score(total_fg):
    """Map a summed interior foreground score onto [0, 1) monotonically."""
    return total_fg / (1.0 + total_fg)


def proposal_detections(text, config):
    """Proposals read back as detections; the anchor size decides the class."""
    _, ps = read_proposals(text)
    sizes = [tuple(s) for s in config.anchor_sizes]
    dets = []
    for i in range(len(ps)):
        anchor = tuple(float(v) for v in ps.anchors[i])
        cls = config.classes[sizes.index(anchor)] if anchor in sizes else config.classes[0]
        dets.append(Detection(Box3D.from_array(ps.boxes[i]), stub_score(float(ps.scores[i])),
                              cls))
    return dets


def label_detections(text, classes):
    dets = []
    for lab in parse_labels(text, classes):
        if not lab.matchable:
            continue
        if lab.score is None:
            raise ValueError(f"detection row for {lab.cls} has no score column")
        dets.append(Detection(lab.box, lab.score, lab.cls))
    return dets


def post_nms(dets, threshold):
    """Per-class rotated-BEV NMS applied before matching."""
    out = []
    for cls in sorted({d.cls for d in dets}):
        group = [d for d in dets if d.cls == cls]
        keep = nms_boxes([d.box for d in group], [d.score for d in group], threshold)
        out.extend(group[i] for i in keep)
    return out


def _pooled_recall(frames, cls, iou_thresh, tier):
    hit = total = 0
    for dets, labels in frames:
        gts = [lab for lab in labels if lab.matchable and lab.cls == cls and in_tier(lab, tier)]
        if not gts:
            continue
        total += len(gts)
        boxes = [d.box for d in dets if d.cls == cls]
        if boxes:
            ov = iou_3d_matrix(boxes, [g.box for g in gts])
            hit += int(np.count_nonzero(ov.max(axis=0) >= iou_thresh))
    return 1.0 if total == 0 else hit / total


def evaluate_directory(root, det_dir, config, from_proposals=False, num_points=11):
    """``(report, per-frame records)`` over every labelled frame of ``root``."""
    det_dir = Path(det_dir)
    suffix = ".jsonl" if from_proposals else ".txt"
    label_ids = {p.stem for p in (Path(root) / "label_2").glob("*.txt")}
    det_ids = {p.stem for p in det_dir.glob(f"*{suffix}")}
    if label_ids != det_ids:
        raise FrameSetError({"detections": sorted(label_ids - det_ids),
                             "labels": sorted(det_ids - label_ids)})
    frames, ids = [], []
    for fid in sorted(label_ids):
        text = (det_dir / f"{fid}{suffix}").read_text()
        dets = (proposal_detections(text, config) if from_proposals
                else label_detections(text, config.classes))
        labels = frame_labels(root, fid, config.classes)
        frames.append((post_nms(dets, config.post_nms_thresh), labels))
        ids.append(fid)
    report = {"num_frames": len(frames), "num_points": num_points,
              "post_nms_thresh": config.post_nms_thresh, "classes": {}}
    for cls in config.classes:
        thr = IOU_THRESHOLDS.get(cls, 0.5)
        per = {"iou_thresh": thr}
        for tier in EVAL_TIERS:
            per[tier] = {
                "ap_3d": evaluate_frames(frames, cls, thr, "3d", tier, num_points),
                "ap_bev": evaluate_frames(frames, cls, thr, "bev", tier, num_points),
                "recall_3d": _pooled_recall(frames, cls, thr, tier),
            }
        report["classes"][cls] = per
    return report, frame_records(ids, frames, config)


def frame_records(ids, frames, config):
    """Per-frame AP inputs: scores and 3D true-positive flags per class."""
    out = []
    for fid, (dets, labels) in zip(ids, frames):
        rec = {"frame_id": fid, "classes": {}}
        for cls in config.classes:
            ds = [d for d in dets if d.cls == cls]
            gts = [lab.box for lab in labels if lab.matchable and lab.cls == cls]
            scores, tp = match_detections([d.box for d in ds], [d.score for d in ds], gts,
                                          IOU_THRESHOLDS.get(cls, 0.5), "3d")
            rec["classes"][cls] = {"num_gt": len(gts), "scores": _floats(scores),
                                   "tp": [bool(t) for t in tp]}
        out.append(rec)
    return out
