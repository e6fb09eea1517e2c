"""Pipeline configuration and its ``key = value`` file format.

Keys are the field names of :class:`PipelineConfig`. ``model`` picks the
defaults (``car`` or ``ped_cyc``) and is applied first; every other key
overrides one field. Value syntax: numbers as usual, pairs and lists comma
separated (``scale_range = 0.9, 1.1``), anchor sizes as ``l,h,w`` triples
separated by ``;``. Blank lines and ``#`` comments are ignored.
"""
from dataclasses import asdict, dataclass, fields, replace
import math
import typing

from .augmentation import AugmentationConfig
from .errors import ConfigError
from .proposal import (
    ANCHOR_YAWS, CAR_SIZE, CYCLIST_SIZE, DEFAULT_MAX_KEEP, DEFAULT_NMS_THRESHOLD,
    MAX_ALIGN_ITER, PEDESTRIAN_SIZE, SHIFT_RATIOS, AnchorConfig,
)

MODELS = ("car", "ped_cyc")


@dataclass(frozen=True)
class PipelineConfig:
    model: str = "car"
    classes: typing.Tuple[str, ...] = ("Car",)
    anchor_sizes: typing.Tuple[typing.Tuple[float, float, float], ...] = (CAR_SIZE,)
    anchor_yaws: typing.Tuple[float, ...] = ANCHOR_YAWS
    shift_ratios: typing.Tuple[float, ...] = SHIFT_RATIOS
    n_points: int = 10_000
    m_points: int = 512
    num_angle_bins: int = 12
    fg_threshold: float = 0.5
    pos_thresh: float = 0.55
    neg_thresh: float = 0.55
    nms_thresh: float = DEFAULT_NMS_THRESHOLD
    max_keep: int = DEFAULT_MAX_KEEP
    align_iters: int = MAX_ALIGN_ITER
    post_nms_thresh: float = 0.01
    lam: float = 1.0
    minibatch_size: int = 64
    pos_fraction: float = 0.25
    per_box_rot_range: typing.Tuple[float, float] = (-math.pi / 3, math.pi / 3)
    per_box_translation_std: float = 0.25
    flip_prob: float = 0.5
    global_rot_range: typing.Tuple[float, float] = (-math.pi / 4, math.pi / 4)
    scale_range: typing.Tuple[float, float] = (0.9, 1.1)
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        for name in ("n_points", "m_points", "num_angle_bins", "max_keep", "align_iters",
                     "minibatch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("fg_threshold", "pos_thresh", "neg_thresh", "nms_thresh",
                     "post_nms_thresh", "flip_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.neg_thresh > self.pos_thresh:
            raise ConfigError("neg_thresh must not exceed pos_thresh")
        if not 0.0 < self.pos_fraction < 1.0:
            raise ConfigError("pos_fraction must lie in (0, 1)")
        if self.lam < 0:
            raise ConfigError("lam must be non-negative")
        try:
            self.anchors
            self.augmentation
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def for_model(cls, model="car", **overrides):
        if model == "ped_cyc":
            base = cls(model="ped_cyc", classes=("Pedestrian", "Cyclist"),
                       anchor_sizes=(PEDESTRIAN_SIZE, CYCLIST_SIZE), n_points=5_000,
                       pos_thresh=0.5, neg_thresh=0.5)
        elif model == "car":
            base = cls()
        else:
            raise ConfigError(f"model must be one of {MODELS}, got {model!r}")
        return replace(base, **overrides) if overrides else base

    @property
    def anchors(self):
        return AnchorConfig(self.anchor_sizes, self.anchor_yaws, self.shift_ratios)

    @property
    def augmentation(self):
        return AugmentationConfig(self.per_box_rot_range, self.per_box_translation_std,
                                  self.flip_prob, self.global_rot_range, self.scale_range,
                                  self.seed)

    def to_text(self):
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def as_dict(self):
        return asdict(self)


FIELD_TYPES = typing.get_type_hints(PipelineConfig)


def format_value(value):
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(",".join(repr(float(v)) for v in t) for t in value)
        return ", ".join(v if isinstance(v, str) else repr(v) for v in value)
    return str(value) if isinstance(value, str) else repr(value)


def parse_value(key, text):
    hint = FIELD_TYPES.get(key)
    if hint is None:
        raise ConfigError(f"unknown config key {key!r}")
    text = text.strip()
    try:
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint is str:
            return text
        args = typing.get_args(hint)
        if args and typing.get_origin(args[0]) is tuple:
            return tuple(tuple(float(v) for v in part.split(",")) for part in text.split(";")
                         if part.strip())
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if args[0] is str:
            return tuple(parts)
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def parse_config_text(text):
    """Raw ``{key: value-string}`` from a config file."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def build_config(raw):
    """Config from ``{key: string}`` overrides; ``model`` selects defaults."""
    raw = dict(raw)
    model = raw.pop("model", "car")
    overrides = {k: parse_value(k, v) for k, v in raw.items()}
    try:
        return PipelineConfig.for_model(model.strip(), **overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
