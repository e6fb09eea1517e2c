"""scikit-learn style wrapper around proposal generation.

``ProposalGenerator`` takes one frame at a time: either a camera-frame
:class:`PointCloud` with foreground scores, or an (N, 4) array whose columns
are ``x, y, z, score``. ``fit`` only validates, since there is nothing to learn.
"""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .kitti_io import CAMERA, PointCloud
from .proposal import (
    ANCHOR_YAWS, CAR_SIZE, DEFAULT_MAX_KEEP, DEFAULT_NMS_THRESHOLD, MAX_ALIGN_ITER,
    SHIFT_RATIOS, AnchorConfig, generate_proposals, select_positive_points,
)


def check_cloud(X):
    """Coerce ``X`` to a camera-frame PointCloud carrying scores."""
    if isinstance(X, PointCloud):
        if X.frame != CAMERA:
            raise ValueError("ProposalGenerator expects a camera-frame cloud")
        if X.scores is None:
            raise ValueError("cloud needs foreground scores")
        return X
    arr = check_array(X, dtype=np.float64, ensure_min_samples=1)
    if arr.shape[1] != 4:
        raise ValueError(f"expected columns x, y, z, score; got {arr.shape[1]} columns")
    pts = np.hstack([arr[:, :3], np.zeros((len(arr), 1))])
    return PointCloud(pts, CAMERA, arr[:, 3])


def check_params(est):
    if int(est.n_points) <= 0:
        raise ValueError("n_points must be positive")
    if not 0.0 <= est.fg_threshold <= 1.0:
        raise ValueError("fg_threshold must lie in [0, 1]")
    if not 0.0 <= est.nms_thresh <= 1.0:
        raise ValueError("nms_thresh must lie in [0, 1]")
    if int(est.max_keep) <= 0 or int(est.align_iters) <= 0:
        raise ValueError("max_keep and align_iters must be positive")
    return AnchorConfig(est.anchor_sizes, est.anchor_yaws, est.shift_ratios)


class ProposalGenerator(BaseEstimator, TransformerMixin):
    """Seed, align and NMS proposals for one frame.

    Parameters
    ----------
    n_points : int
        Points kept per frame, foreground first.
    anchor_sizes, anchor_yaws, shift_ratios : tuple
        Anchor set; ``len(sizes) * len(yaws) * len(ratios)`` boxes per point.
    fg_threshold : float
        Score at or above which a point is foreground.
    nms_thresh, max_keep : float, int
        Rotated BEV NMS settings.
    align_iters : int
        Maximum re-centerings per proposal.
    random_state : int, Generator or None
        Point subsampling seed.
    """

    def __init__(self, n_points=10_000, anchor_sizes=(CAR_SIZE,), anchor_yaws=ANCHOR_YAWS,
                 shift_ratios=SHIFT_RATIOS, fg_threshold=0.5,
                 nms_thresh=DEFAULT_NMS_THRESHOLD, max_keep=DEFAULT_MAX_KEEP,
                 align_iters=MAX_ALIGN_ITER, random_state=None):
        self.n_points = n_points
        self.anchor_sizes = anchor_sizes
        self.anchor_yaws = anchor_yaws
        self.shift_ratios = shift_ratios
        self.fg_threshold = fg_threshold
        self.nms_thresh = nms_thresh
        self.max_keep = max_keep
        self.align_iters = align_iters
        self.random_state = random_state

    def fit(self, X, y=None):
        check_cloud(X)
        self.anchors_ = check_params(self)
        self.n_features_in_ = 4
        return self

    def generate(self, X):
        """Proposals as a :class:`~pointprop.proposal.ProposalSet`.

        Point indices in the result refer to the selected subset, available as
        ``self.selection_``.
        """
        check_is_fitted(self, "anchors_")
        cloud = check_cloud(X)
        rng = np.random.default_rng(self.random_state)
        self.selection_ = select_positive_points(cloud, int(self.n_points), rng,
                                                 self.fg_threshold)
        return generate_proposals(self.selection_, self.anchors_, self.nms_thresh,
                                  int(self.max_keep), int(self.align_iters))

    def transform(self, X):
        """(K, 8) array: box rows ``x, y, z, l, h, w, yaw`` then the score."""
        ps = self.generate(X)
        return np.hstack([ps.boxes, ps.scores[:, None]])
