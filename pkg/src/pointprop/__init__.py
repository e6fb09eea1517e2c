"""Point-seeded 3D proposals for LiDAR object detection.

Geometry and IoU (rotated BEV, 3D, PointsIoU), KITTI I/O, proposal seeding
and NMS, target assignment and encoding, loss terms, augmentation and
AP/recall evaluation.
"""
from .geometry import Box3D, bev_iou, iou_3d, points_iou
from .kitti_io import Calibration, GroundTruthLabel, MaskImage, PointCloud
from .proposal import AnchorConfig, ProposalSet, generate_proposals, nms_bev
from .config import PipelineConfig

__version__ = "0.1.0"

__all__ = [
    "AnchorConfig", "Box3D", "Calibration", "GroundTruthLabel", "MaskImage",
    "PipelineConfig", "PointCloud", "ProposalSet", "bev_iou", "generate_proposals",
    "iou_3d", "nms_bev", "points_iou",
]
