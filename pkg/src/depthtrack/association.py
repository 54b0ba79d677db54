"""Cost construction, optimal assignment and the three-stage matching cascade."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .config import TrackerConfig
from .errors import ShapeMismatch
from .geometry import PointCloud, VoxelStats, box_iou_matrix, pairwise_voxel_iou
from .ingest import Box

NORM_EPS = 1e-9


@dataclass
class CostWeights:
    w_iou: float = 1.0
    w_docm: float = 0.2
    w_app: float = 0.25
    gate_iou: float = 0.0

    def __post_init__(self):
        if min(self.w_iou, self.w_docm, self.w_app) < 0:
            raise ValueError("cost weights must be non-negative")
        if self.w_iou + self.w_docm + self.w_app <= 0:
            raise ValueError("at least one cost weight must be positive")
        if not 0.0 <= self.gate_iou <= 1.0:
            raise ValueError("gate_iou must lie in [0, 1]")


@dataclass
class AssociationResult:
    matches: list[tuple[int, int]] = field(default_factory=list)
    unmatched_tracks: list[int] = field(default_factory=list)
    unmatched_dets: list[int] = field(default_factory=list)


# --------------------------------------------------------------------------
# motion direction consistency


def docm_displacement(prev, curr, kappa: float = 1.0) -> np.ndarray:
    """Displacement ``curr - prev`` of two ``(u, v, d)`` points, depth scaled by ``kappa``."""
    prev = np.asarray(prev, dtype=np.float64)
    curr = np.asarray(curr, dtype=np.float64)
    d = curr - prev
    d[..., 2] *= kappa
    return d


def docm_consistency(v_hist, v_curr) -> float:
    """Cosine of the angle between two displacement vectors (0 if either is ~0)."""
    a = np.asarray(v_hist, dtype=np.float64)
    b = np.asarray(v_curr, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < NORM_EPS or nb < NORM_EPS:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def docm_matrix(v_hist: Sequence[Optional[np.ndarray]], last_points, det_points, kappa: float = 1.0) -> np.ndarray:
    """Consistency between each track's history and the step to each detection.

    ``v_hist[t]`` is already a (depth-scaled) displacement or None, ``last_points``
    holds the tracks' last observed ``(u, v, d)``, ``det_points`` the detections'.
    """
    n, m = len(v_hist), len(det_points)
    out = np.zeros((n, m))
    if n == 0 or m == 0:
        return out
    dets = np.asarray(det_points, dtype=np.float64).reshape(m, 3)
    for t in range(n):
        if v_hist[t] is None:
            continue
        hist = np.asarray(v_hist[t], dtype=np.float64)
        nh = np.linalg.norm(hist)
        if nh < NORM_EPS:
            continue
        curr = docm_displacement(last_points[t], dets, kappa)
        nc = np.linalg.norm(curr, axis=1)
        ok = nc >= NORM_EPS
        out[t, ok] = np.clip(curr[ok] @ hist / (nc[ok] * nh), -1.0, 1.0)
    return out


def appearance_matrix(track_embs, det_embs) -> np.ndarray:
    """Cosine similarity of unit embeddings, 0 wherever either side lacks one."""
    out = np.zeros((len(track_embs), len(det_embs)))
    for t, te in enumerate(track_embs):
        if te is None:
            continue
        for j, de in enumerate(det_embs):
            if de is not None:
                out[t, j] = float(np.dot(te, de))
    return out


# --------------------------------------------------------------------------
# cost and assignment


def build_cost_matrix(ious, docm, app, w: CostWeights) -> np.ndarray:
    """Negated weighted similarity; entries below the IoU gate become +inf."""
    ious = np.asarray(ious, dtype=np.float64)
    docm = np.asarray(docm, dtype=np.float64)
    if docm.shape != ious.shape:
        raise ShapeMismatch(f"docm shape {docm.shape} != iou shape {ious.shape}")
    sim = w.w_iou * ious + w.w_docm * docm
    if app is not None:
        app = np.asarray(app, dtype=np.float64)
        if app.shape != ious.shape:
            raise ShapeMismatch(f"appearance shape {app.shape} != iou shape {ious.shape}")
        sim = sim + w.w_app * app
    cost = -sim
    cost[ious < w.gate_iou] = np.inf
    return cost


def _solve(cost: np.ndarray) -> tuple[list[tuple[int, int]], float]:
    """Minimum-cost partial matching of real pairs with negative cost.

    Pairs that are forbidden or non-negative can only tie or worsen the total,
    so clamping them to zero and running a rectangular assignment is exact.
    """
    if cost.size == 0:
        return [], 0.0
    work = np.where(np.isfinite(cost) & (cost < 0), cost, 0.0)
    rows, cols = linear_sum_assignment(work)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols) if work[r, c] < 0]
    return pairs, float(sum(work[r, c] for r, c in pairs))


def linear_assignment(cost) -> AssociationResult:
    """Minimum total cost matching over the allowed (finite, negative) entries.

    Among equally cheap matchings the one whose sorted pair list is
    lexicographically smallest is returned, so results never depend on solver
    internals.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ShapeMismatch("cost must be a 2D matrix")
    n, m = cost.shape
    work = np.where(np.isfinite(cost) & (cost < 0), cost, 0.0)
    _, best = _solve(work)
    tol = 1e-9 * (1.0 + abs(best))

    matches: list[tuple[int, int]] = []
    free_rows = list(range(n))
    free_cols = list(range(m))
    fixed = 0.0
    while free_rows:
        r = free_rows[0]
        rest_rows = free_rows[1:]
        chosen = None
        for c in free_cols:
            if work[r, c] >= 0:
                continue
            cols = [k for k in free_cols if k != c]
            _, sub = _solve(work[np.ix_(rest_rows, cols)]) if rest_rows and cols else ([], 0.0)
            if fixed + work[r, c] + sub <= best + tol:
                chosen = c
                break
        if chosen is not None:
            matches.append((r, chosen))
            fixed += work[r, chosen]
            free_cols.remove(chosen)
        free_rows = rest_rows
    matched_r = {r for r, _ in matches}
    matched_c = {c for _, c in matches}
    return AssociationResult(
        matches,
        [r for r in range(n) if r not in matched_r],
        [c for c in range(m) if c not in matched_c],
    )


# --------------------------------------------------------------------------
# cascade


@dataclass
class TrackCue:
    """What the cascade needs to know about one live track this frame."""

    predicted_box: Box
    predicted_cloud: PointCloud
    last_box: Box
    last_cloud: PointCloud
    last_point: tuple[float, float, float]
    v_hist: Optional[np.ndarray] = None
    embedding: Optional[np.ndarray] = None


@dataclass
class DetectionCue:
    bbox: Box
    score: float
    cloud: PointCloud
    point: tuple[float, float, float]
    embedding: Optional[np.ndarray] = None


def _iou_block(tracks, dets, cfg: TrackerConfig, stats, workers, last: bool = False) -> np.ndarray:
    if not tracks or not dets:
        return np.zeros((len(tracks), len(dets)))
    if cfg.iou_mode == "box2d":
        tboxes = [t.last_box if last else t.predicted_box for t in tracks]
        return box_iou_matrix(tboxes, [d.bbox for d in dets])
    tclouds = [t.last_cloud if last else t.predicted_cloud for t in tracks]
    return pairwise_voxel_iou([d.cloud for d in dets], tclouds, cfg.delta_v, stats, workers).T


def _match(cost, track_ids, det_ids) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    res = linear_assignment(cost)
    matches = [(track_ids[t], det_ids[d]) for t, d in res.matches]
    return matches, [track_ids[t] for t in res.unmatched_tracks], [det_ids[d] for d in res.unmatched_dets]


def associate_cascade(
    tracks: Sequence[TrackCue],
    detections: Sequence[DetectionCue],
    cfg: TrackerConfig,
    stats: Optional[VoxelStats] = None,
    workers: int = 1,
) -> AssociationResult:
    """High-score matching on all cues, low-score matching on overlap only,
    then recovery of leftover tracks from their last observation."""
    high = [j for j, d in enumerate(detections) if d.score >= cfg.score_high]
    low = [j for j, d in enumerate(detections) if cfg.score_low <= d.score < cfg.score_high]
    all_tracks = list(range(len(tracks)))
    matches: list[tuple[int, int]] = []

    # stage 1: confident detections against every live track
    t_sub = [tracks[t] for t in all_tracks]
    d_sub = [detections[j] for j in high]
    ious = _iou_block(t_sub, d_sub, cfg, stats, workers)
    docm = docm_matrix(
        [t.v_hist for t in t_sub], [t.last_point for t in t_sub], [d.point for d in d_sub], cfg.depth_axis_scale
    )
    app = appearance_matrix([t.embedding for t in t_sub], [d.embedding for d in d_sub])
    cost = build_cost_matrix(ious, docm, app, CostWeights(cfg.w_iou, cfg.w_docm, cfg.w_app, cfg.gate_iou))
    m1, rem_tracks, rem_high = _match(cost, all_tracks, high)
    matches += m1

    # stage 2: low-score detections against what is left, overlap only
    t_sub = [tracks[t] for t in rem_tracks]
    d_sub = [detections[j] for j in low]
    ious = _iou_block(t_sub, d_sub, cfg, stats, workers)
    if cfg.docm_in_low_stage:
        docm = docm_matrix(
            [t.v_hist for t in t_sub], [t.last_point for t in t_sub], [d.point for d in d_sub], cfg.depth_axis_scale
        )
        weights = CostWeights(1.0, cfg.w_docm, 0.0, cfg.gate_iou_low)
    else:
        docm = np.zeros_like(ious)
        weights = CostWeights(1.0, 0.0, 0.0, cfg.gate_iou_low)
    m2, rem_tracks, rem_low = _match(build_cost_matrix(ious, docm, None, weights), rem_tracks, low)
    matches += m2

    # stage 3: leftover tracks recovered from their last observed geometry
    t_sub = [tracks[t] for t in rem_tracks]
    d_sub = [detections[j] for j in rem_high]
    ious = _iou_block(t_sub, d_sub, cfg, stats, workers, last=True)
    cost = build_cost_matrix(ious, np.zeros_like(ious), None, CostWeights(1.0, 0.0, 0.0, cfg.gate_iou_ocr))
    m3, rem_tracks, rem_high = _match(cost, rem_tracks, rem_high)
    matches += m3

    matched_dets = {d for _, d in matches}
    return AssociationResult(
        sorted(matches),
        sorted(rem_tracks),
        [j for j in range(len(detections)) if j not in matched_dets],
    )
