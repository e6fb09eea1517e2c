"""Exception hierarchy.

Every error raised on purpose by this package derives from ``PointPropError``.
Most also derive from a builtin so callers can catch ``ValueError`` as usual.
"""


class PointPropError(Exception):
    pass


class LengthError(PointPropError, ValueError):
    """Binary buffer length is not a whole number of records."""


class MissingKeyError(PointPropError, KeyError):
    pass


class ShapeError(PointPropError, ValueError):
    pass


class FieldCountError(PointPropError, ValueError):
    pass


class FrameError(PointPropError, ValueError):
    """Point cloud is in the wrong coordinate frame for the operation."""


class RangeError(PointPropError, ValueError):
    pass


class EmptyCloudError(PointPropError, ValueError):
    pass


class EmptyProposalError(PointPropError, ValueError):
    """Proposal has no interior points."""


class InsufficientProposalsError(PointPropError, ValueError):
    pass


class PlacementError(PointPropError, RuntimeError):
    pass


class ConfigError(PointPropError, ValueError):
    pass


class FrameSetError(PointPropError, ValueError):
    """Two inputs that must cover the same frames do not."""

    def __init__(self, missing):
        self.missing = dict(missing)
        parts = [f"{k}: {', '.join(v)}" for k, v in self.missing.items() if v]
        super().__init__("frame sets differ; missing " + "; ".join(parts))
