"""Tracker configuration and its flat ``key = value`` file form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Any

import numpy as np

from .errors import ConfigError

IOU_MODES = ("voxel3d", "box2d")
OCCLUSION_METRICS = ("box2d", "voxel3d")
PROJECTION_MODES = ("mask", "bbox")
TRACK_CLOUD_MODES = ("translate", "static")


@dataclass
class TrackerConfig:
    # defaults for voxel size, occlusion sensitivity, occlusion overlap threshold
    # and the two score thresholds are the reference settings
    delta_v: float = 0.4
    alpha: float = 3.0
    tau_iou: float = 0.6
    score_high: float = 0.6
    score_low: float = 0.1
    min_hits: int = 3
    max_age: int = 30
    w_iou: float = 1.0
    w_docm: float = 0.2
    w_app: float = 0.25
    gate_iou: float = 0.0
    gate_iou_low: float = 0.1
    gate_iou_ocr: float = 0.1
    iou_mode: str = "voxel3d"
    occlusion_metric: str = "box2d"
    projection_mode: str = "mask"
    track_cloud: str = "translate"
    depth_axis_scale: float = 1.0
    delta_t_hist: int = 3
    embedding_momentum: float = 0.9
    docm_in_low_stage: bool = False
    q_pos: float = 1.0
    q_shape: float = 1.0
    q_depth: float = 1.0
    q_vel: float = 0.01
    q_area_vel: float = 1e-4
    q_depth_vel: float = 0.01
    r_pos: float = 1.0
    r_shape: float = 10.0
    r_depth: float = 1.0
    p_pos: float = 10.0
    p_vel: float = 1e4

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def check(cond, msg):
            if not cond:
                raise ConfigError(msg)

        check(self.delta_v > 0, "delta_v must be positive")
        check(self.alpha >= 0, "alpha must be >= 0")
        for name in ("tau_iou", "score_high", "score_low", "gate_iou", "gate_iou_low", "gate_iou_ocr", "embedding_momentum"):
            check(0.0 <= getattr(self, name) <= 1.0, f"{name} must lie in [0, 1]")
        check(self.score_low < self.score_high, "score_low must be below score_high")
        check(self.min_hits >= 1, "min_hits must be >= 1")
        check(self.max_age >= 0, "max_age must be >= 0")
        check(self.delta_t_hist >= 1, "delta_t_hist must be >= 1")
        for name in ("w_iou", "w_docm", "w_app"):
            check(getattr(self, name) >= 0, f"{name} must be >= 0")
        check(self.w_iou + self.w_docm + self.w_app > 0, "at least one cost weight must be positive")
        check(self.depth_axis_scale >= 0, "depth_axis_scale must be >= 0")
        for name in ("q_pos", "q_shape", "q_depth", "q_vel", "q_area_vel", "q_depth_vel", "p_pos", "p_vel"):
            check(getattr(self, name) >= 0, f"{name} must be >= 0")
        for name in ("r_pos", "r_shape", "r_depth"):
            check(getattr(self, name) > 0, f"{name} must be positive")
        check(self.iou_mode in IOU_MODES, f"iou_mode must be one of {IOU_MODES}")
        check(self.occlusion_metric in OCCLUSION_METRICS, f"occlusion_metric must be one of {OCCLUSION_METRICS}")
        check(self.projection_mode in PROJECTION_MODES, f"projection_mode must be one of {PROJECTION_MODES}")
        check(self.track_cloud in TRACK_CLOUD_MODES, f"track_cloud must be one of {TRACK_CLOUD_MODES}")

    def noise(self):
        from .motion import NoiseConfig

        return NoiseConfig(
            Q_base=np.diag([self.q_pos, self.q_pos, self.q_shape, self.q_shape, self.q_depth,
                            self.q_vel, self.q_vel, self.q_area_vel, self.q_depth_vel]),
            R=np.diag([self.r_pos, self.r_pos, self.r_shape, self.r_shape, self.r_depth]),
            P0=np.diag([self.p_pos] * 5 + [self.p_vel] * 4),
            alpha=self.alpha,
            tau_iou=self.tau_iou,
        )

    def replace(self, **changes) -> "TrackerConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {format_value(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str, base: "TrackerConfig | None" = None) -> "TrackerConfig":
        return (base or cls()).replace(**parse_overrides(text))


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _field_types() -> dict[str, type]:
    defaults = TrackerConfig.__dataclass_fields__
    return {name: type(f.default) for name, f in defaults.items()}


def coerce(key: str, raw: str) -> Any:
    types = _field_types()
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    kind = types[key]
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_overrides(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = coerce(key, value)
    return out
