"""Depth-aware multi-object tracking.

Detections carry instance masks; together with a per-frame depth map they are
lifted to 3D point clouds, compared with a voxel-occupancy IoU, and tracked
with a Kalman filter whose process noise grows while an object is hidden
behind a nearer one.
"""

from .config import TrackerConfig
from .errors import DepthTrackError
from .ingest import CameraIntrinsics, Detection, FrameRecord, Sequence, parse_sequence
from .metrics import EvalReport, evaluate
from .tracker import Tracker, run_sequence

__all__ = [
    "CameraIntrinsics",
    "DepthTrackError",
    "Detection",
    "EvalReport",
    "FrameRecord",
    "Sequence",
    "Tracker",
    "TrackerConfig",
    "evaluate",
    "parse_sequence",
    "run_sequence",
]
__version__ = "0.1.0"
