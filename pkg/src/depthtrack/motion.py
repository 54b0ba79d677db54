"""Constant-velocity Kalman filter over ``[x, y, s, r, d]`` with occlusion-scaled
process noise.

State layout: centre x, centre y (px), area s (px^2), aspect ratio r = w/h,
mean depth d, then velocities of x, y, s and d.  The aspect ratio carries no
velocity.  Observations are the first five components.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from typing import Optional

import numpy as np

from .errors import LengthMismatch, NonPositiveGeometry, SingularInnovationCovariance
from .geometry import box_iou_matrix

DIM_X = 9
DIM_Z = 5
MIN_AREA = 1e-3
MIN_ASPECT = 1e-4

F = np.eye(DIM_X)
F[0, 5] = F[1, 6] = F[2, 7] = F[4, 8] = 1.0
H = np.eye(DIM_Z, DIM_X)


def _diag(*values) -> np.ndarray:
    return np.diag(np.asarray(values, dtype=np.float64))


@dataclass
class NoiseConfig:
    Q_base: np.ndarray = field(default_factory=lambda: _diag(1, 1, 1, 1, 1.0, 0.01, 0.01, 1e-4, 0.01))
    R: np.ndarray = field(default_factory=lambda: _diag(1, 1, 10, 10, 1.0))
    P0: np.ndarray = field(default_factory=lambda: _diag(10, 10, 10, 10, 10, 1e4, 1e4, 1e4, 1e4))
    alpha: float = 3.0
    tau_iou: float = 0.6

    def __post_init__(self):
        for name, mat, n in (("Q_base", self.Q_base, DIM_X), ("R", self.R, DIM_Z), ("P0", self.P0, DIM_X)):
            mat = np.asarray(mat, dtype=np.float64)
            if mat.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}")
            if np.linalg.eigvalsh((mat + mat.T) / 2).min() < -1e-12:
                raise ValueError(f"{name} must be positive semi-definite")
            setattr(self, name, mat)
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0.0 <= self.tau_iou <= 1.0:
            raise ValueError("tau_iou must lie in [0, 1]")


@dataclass(eq=False)
class TrackState:
    x: np.ndarray
    P: np.ndarray
    lam: float = 1.0
    clamped: int = 0  # times s or r had to be pushed back above zero

    def copy(self) -> "TrackState":
        return TrackState(self.x.copy(), self.P.copy(), self.lam, self.clamped)

    @property
    def observed(self) -> np.ndarray:
        return self.x[:DIM_Z]


def kf_init(obs, noise: Optional[NoiseConfig] = None) -> TrackState:
    noise = noise or NoiseConfig()
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (DIM_Z,):
        raise ValueError("observation must be [x, y, s, r, d]")
    if not (obs[2] > 0 and obs[3] > 0):
        raise NonPositiveGeometry(f"area and aspect must be positive: s={obs[2]}, r={obs[3]}")
    x = np.zeros(DIM_X)
    x[:DIM_Z] = obs
    return TrackState(x, noise.P0.copy(), 1.0)


def kf_predict(state: TrackState, noise: NoiseConfig) -> TrackState:
    """Propagate one frame, adding ``lam * Q_base`` process noise."""
    x = F @ state.x
    P = F @ state.P @ F.T + state.lam * noise.Q_base
    P = (P + P.T) / 2.0
    clamped = state.clamped
    if x[2] < MIN_AREA:
        x[2] = MIN_AREA
        clamped += 1
    return TrackState(x, P, state.lam, clamped)


def kf_update(state: TrackState, obs, noise: NoiseConfig) -> TrackState:
    """Correct with an ``[x, y, s, r, d]`` observation; Joseph-form covariance."""
    z = np.asarray(obs, dtype=np.float64)
    if z.shape != (DIM_Z,) or not np.all(np.isfinite(z)):
        raise ValueError("observation must be five finite values")
    innovation = z - H @ state.x
    S = H @ state.P @ H.T + noise.R
    S = (S + S.T) / 2.0
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > 1e12:
        raise SingularInnovationCovariance("innovation covariance is singular")
    K = np.linalg.solve(S, H @ state.P).T
    x = state.x + K @ innovation
    A = np.eye(DIM_X) - K @ H
    P = A @ state.P @ A.T + K @ noise.R @ K.T
    P = (P + P.T) / 2.0
    clamped = state.clamped
    if x[2] <= 0:
        x[2] = MIN_AREA
        clamped += 1
    if x[3] <= 0:
        x[3] = MIN_ASPECT
        clamped += 1
    return TrackState(x, P, state.lam, clamped)


def innovation_nis(state: TrackState, obs, noise: NoiseConfig) -> float:
    """Normalised innovation squared of ``obs`` against a predicted state."""
    y = np.asarray(obs, dtype=np.float64) - H @ state.x
    S = H @ state.P @ H.T + noise.R
    return float(y @ np.linalg.solve(S, y))


def state_to_box(x) -> tuple[float, float, float, float]:
    s = max(float(x[2]), MIN_AREA)
    r = max(float(x[3]), MIN_ASPECT)
    w = np.sqrt(s * r)
    h = s / w
    return (float(x[0] - w / 2), float(x[1] - h / 2), float(x[0] + w / 2), float(x[1] + h / 2))


def box_to_obs(bbox, depth: float) -> np.ndarray:
    x1, y1, x2, y2 = bbox
    w, h = x2 - x1, y2 - y1
    return np.array([(x1 + x2) / 2.0, (y1 + y2) / 2.0, w * h, w / h, depth])


# --------------------------------------------------------------------------
# occlusion


def _overlaps(boxes, depths, iou) -> tuple[np.ndarray, np.ndarray]:
    depths = np.asarray(depths, dtype=np.float64)
    n = len(depths)
    if len(boxes) != n:
        raise LengthMismatch(f"{len(boxes)} boxes but {n} depths")
    if iou is None:
        iou = box_iou_matrix(boxes, boxes) if n else np.zeros((0, 0))
    iou = np.asarray(iou, dtype=np.float64)
    if iou.shape != (n, n):
        raise LengthMismatch(f"overlap matrix has shape {iou.shape}, expected {(n, n)}")
    return iou, depths


def occlusion_scores(boxes, depths, tau_iou: float, iou=None) -> tuple[np.ndarray, np.ndarray]:
    """Occlusion flags and scores for every object of one frame.

    Object i is occluded when some other object overlaps it by more than
    ``tau_iou`` while being nearer (smaller depth).  Its score is the largest
    such overlap, 0 for unoccluded objects.  ``iou`` may supply a precomputed
    symmetric overlap matrix (e.g. voxel IoU between the objects' clouds).
    """
    iou, depths = _overlaps(boxes, depths, iou)
    n = depths.size
    occluders = (iou > tau_iou) & (depths[:, None] > depths[None, :])
    occluders[np.arange(n), np.arange(n)] = False
    status = occluders.any(axis=1)
    scores = np.where(occluders, iou, 0.0).max(axis=1) if n else np.zeros(0)
    return status, scores


def occlusion_status(boxes, depths, tau_iou: float, iou=None) -> list[bool]:
    status, _ = occlusion_scores(boxes, depths, tau_iou, iou)
    return [bool(v) for v in status]


def occlusion_score(i: int, boxes, depths, tau_iou: float, iou=None) -> float:
    _, scores = occlusion_scores(boxes, depths, tau_iou, iou)
    return float(scores[i])


def noise_scale(occluded: bool, score: float, alpha: float) -> float:
    """``1 + alpha * score`` for occluded objects, else 1.

    Evaluated on the shortest decimal forms of the inputs so that, e.g.,
    alpha 3 and score 0.8 give exactly 3.4 rather than 3.4000000000000004.
    """
    if not occluded:
        return 1.0
    return float(Decimal(repr(float(alpha))) * Decimal(repr(float(score))) + 1)
