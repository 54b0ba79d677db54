"""Per-frame tracking loop and track lifecycle."""

from __future__ import annotations

import enum
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .association import DetectionCue, TrackCue, associate_cascade, docm_displacement
from .config import TrackerConfig
from .errors import OutOfOrderFrame, SingularInnovationCovariance
from .geometry import (
    PointCloud,
    VoxelStats,
    backproject,
    box_iou_matrix,
    box_mask,
    mean_masked_depth,
    pairwise_voxel_iou,
)
from .ingest import CameraIntrinsics, FrameRecord, ProjectionCenter, Sequence, TrackOutputRow
from .motion import (
    TrackState,
    box_to_obs,
    kf_init,
    kf_predict,
    kf_update,
    noise_scale,
    occlusion_scores,
    state_to_box,
)

OBS_MEMORY = 16


class TrackStatus(str, enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    LOST = "lost"
    REMOVED = "removed"


@dataclass(eq=False)
class Track:
    id: int
    state: TrackState
    status: TrackStatus
    last_cloud: PointCloud
    last_box: tuple
    last_point: tuple[float, float, float]
    last_frame: int
    last_score: float
    hits: int = 1
    time_since_update: int = 0
    observations: deque = field(default_factory=lambda: deque(maxlen=OBS_MEMORY))
    velocity_history: deque = field(default_factory=lambda: deque(maxlen=OBS_MEMORY))
    embedding: Optional[np.ndarray] = None

    def history_vector(self, delta_t: int, kappa: float) -> Optional[np.ndarray]:
        """Displacement into the last observation from the one ``delta_t`` frames
        earlier, or from the nearest earlier observation when that is missing."""
        if len(self.observations) < 2:
            return None
        last_frame, *last = self.observations[-1]
        by_frame = {f: p for f, *p in self.observations}
        prev = None
        for dt in range(delta_t, 0, -1):
            if last_frame - dt in by_frame:
                prev = by_frame[last_frame - dt]
                break
        if prev is None:
            prev = self.observations[-2][1:]
        return docm_displacement(prev, last, kappa)


@dataclass
class RunStats:
    frame_seconds: list[float] = field(default_factory=list)
    voxel: VoxelStats = field(default_factory=VoxelStats)
    tracks_created: int = 0
    max_live_tracks: int = 0
    rows: int = 0
    singular_updates: int = 0
    clamp_events: int = 0

    @property
    def frames(self) -> int:
        return len(self.frame_seconds)

    @property
    def fps(self) -> float:
        total = sum(self.frame_seconds)
        return self.frames / total if total > 0 else float("inf")

    def to_text(self, cfg: Optional[TrackerConfig] = None) -> str:
        lines = [
            f"frames = {self.frames}",
            f"rows = {self.rows}",
            f"tracks_created = {self.tracks_created}",
            f"max_live_tracks = {self.max_live_tracks}",
            f"voxel_pairs = {self.voxel.pairs}",
            f"voxel_pairs_pruned = {self.voxel.pruned}",
            f"voxel_grid_cap_hits = {self.voxel.capped}",
            f"singular_updates = {self.singular_updates}",
            f"clamp_events = {self.clamp_events}",
            f"total_seconds = {sum(self.frame_seconds):.6f}",
            f"fps = {self.fps:.3f}",
        ]
        lines += [f"frame_seconds.{i} = {s:.6f}" for i, s in enumerate(self.frame_seconds, 1)]
        if cfg is not None:
            lines += ["[config]"] + cfg.to_text().splitlines()
        return "\n".join(lines) + "\n"


def _translate_cloud(cloud: PointCloud, du: float, dv: float, dd: float, intrinsics: CameraIntrinsics) -> PointCloud:
    """Move a cloud as if its pixels shifted by (du, dv) and its depth by dd."""
    if cloud.empty:
        return cloud
    p = cloud.points
    z = p[:, 2]
    out = np.empty_like(p, order="F")
    z_new = out[:, 2]
    np.add(z, dd, out=z_new)
    if dd < 0:
        np.copyto(z_new, z, where=z_new <= 0)
    if intrinsics.center_mode is ProjectionCenter.BOX_CENTER:
        scale = z_new / z
        np.multiply(p[:, 0], scale, out=out[:, 0])
        np.multiply(p[:, 1], scale, out=out[:, 1])
    else:
        out[:, 0] = (p[:, 0] * intrinsics.fx / z + du) * z_new / intrinsics.fx
        out[:, 1] = (p[:, 1] * intrinsics.fy / z + dv) * z_new / intrinsics.fy
    box = cloud.source_box
    if box is not None:
        box = (box[0] + du, box[1] + dv, box[2] + du, box[3] + dv)
    return PointCloud(out, box)


def _unit(v) -> Optional[np.ndarray]:
    if v is None:
        return None
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    return v / n if n > 0 else None


class Tracker:
    """Online tracker; feed frames in increasing order through :meth:`step`."""

    def __init__(self, cfg: TrackerConfig, intrinsics: CameraIntrinsics, workers: int = 1):
        self.cfg = cfg
        self.intrinsics = intrinsics
        self.noise = cfg.noise()
        self.workers = workers
        self.tracks: list[Track] = []
        self.next_id = 1
        self.last_frame = 0
        self.stats = RunStats()
        self.assignments: dict[int, int] = {}  # track id -> detection index, latest frame

    # -- per-frame pieces ---------------------------------------------------

    def _detection_cues(self, frame: FrameRecord):
        cues, kept = [], []
        for k, det in enumerate(frame.detections):
            if det.score < self.cfg.score_low:
                continue
            if self.cfg.projection_mode == "bbox":
                region = box_mask(det.bbox, frame.depth.shape)
            else:
                region = frame.masks[k]
            cloud = backproject(frame.depth, region, det.bbox, self.intrinsics)
            if cloud.empty:
                d = mean_masked_depth(frame.depth, region, det.bbox)
            else:  # the cloud holds exactly the valid masked depths
                d = float(np.mean(cloud.points[:, 2]))
            u, v = det.center
            cues.append(DetectionCue(det.bbox, det.score, cloud, (u, v, d), _unit(det.embedding)))
            kept.append(k)
        return cues, kept

    def _track_cue(self, trk: Track) -> TrackCue:
        x = trk.state.x
        if self.cfg.track_cloud == "translate":
            lu, lv, ld = trk.last_point
            cloud = _translate_cloud(trk.last_cloud, x[0] - lu, x[1] - lv, x[4] - ld, self.intrinsics)
        else:
            cloud = trk.last_cloud
        return TrackCue(
            predicted_box=state_to_box(x),
            predicted_cloud=cloud,
            last_box=trk.last_box,
            last_cloud=trk.last_cloud,
            last_point=trk.last_point,
            v_hist=trk.history_vector(self.cfg.delta_t_hist, self.cfg.depth_axis_scale),
            embedding=trk.embedding,
        )

    def _occlusion_lambdas(self, cues: list[DetectionCue]) -> np.ndarray:
        if not cues:
            return np.zeros(0)
        boxes = [c.bbox for c in cues]
        depths = [c.point[2] for c in cues]
        if self.cfg.occlusion_metric == "voxel3d":
            clouds = [c.cloud for c in cues]
            overlap = pairwise_voxel_iou(clouds, clouds, self.cfg.delta_v, self.stats.voxel, self.workers)
        else:
            overlap = box_iou_matrix(boxes, boxes)
        status, scores = occlusion_scores(boxes, depths, self.cfg.tau_iou, overlap)
        return np.array([noise_scale(bool(o), float(s), self.cfg.alpha) for o, s in zip(status, scores)])

    def _update(self, trk: Track, cue: DetectionCue, frame_index: int) -> None:
        obs = box_to_obs(cue.bbox, cue.point[2])
        try:
            trk.state = kf_update(trk.state, obs, self.noise)
        except SingularInnovationCovariance:
            self.stats.singular_updates += 1
        trk.hits += 1
        trk.time_since_update = 0
        trk.last_cloud = cue.cloud
        trk.last_box = cue.bbox
        trk.last_point = cue.point
        trk.last_frame = frame_index
        trk.last_score = cue.score
        trk.observations.append((frame_index, *cue.point))
        v = trk.history_vector(self.cfg.delta_t_hist, self.cfg.depth_axis_scale)
        if v is not None:
            trk.velocity_history.append(v)
        if cue.embedding is not None:
            if trk.embedding is None:
                trk.embedding = cue.embedding
            else:
                m = self.cfg.embedding_momentum
                trk.embedding = _unit(m * trk.embedding + (1 - m) * cue.embedding)
        if trk.status is TrackStatus.LOST or (trk.status is TrackStatus.TENTATIVE and trk.hits >= self.cfg.min_hits):
            trk.status = TrackStatus.CONFIRMED

    def _spawn(self, cue: DetectionCue, frame_index: int) -> Track:
        obs = box_to_obs(cue.bbox, cue.point[2])
        status = TrackStatus.CONFIRMED if self.cfg.min_hits <= 1 else TrackStatus.TENTATIVE
        trk = Track(
            id=self.next_id,
            state=kf_init(obs, self.noise),
            status=status,
            last_cloud=cue.cloud,
            last_box=cue.bbox,
            last_point=cue.point,
            last_frame=frame_index,
            last_score=cue.score,
            embedding=cue.embedding,
        )
        trk.observations.append((frame_index, *cue.point))
        self.next_id += 1
        self.stats.tracks_created += 1
        return trk

    # -- public -------------------------------------------------------------

    def step(self, frame: FrameRecord) -> list[TrackOutputRow]:
        started = time.perf_counter()
        if frame.frame_index <= self.last_frame:
            raise OutOfOrderFrame(f"frame {frame.frame_index} after frame {self.last_frame}")
        gap = frame.frame_index - self.last_frame
        self.last_frame = frame.frame_index
        cfg = self.cfg

        # 1. predict with each track's stored noise scale
        for trk in self.tracks:
            for _ in range(gap):
                before = trk.state.clamped
                trk.state = kf_predict(trk.state, self.noise)
                self.stats.clamp_events += trk.state.clamped - before
                trk.time_since_update += 1

        # 2. geometry for detections and tracks
        det_cues, kept = self._detection_cues(frame)
        trk_cues = [self._track_cue(t) for t in self.tracks]

        # 3. association cascade
        result = associate_cascade(trk_cues, det_cues, cfg, self.stats.voxel, self.workers)

        # 4. corrections
        self.assignments = {self.tracks[t].id: kept[d] for t, d in result.matches}
        for t, d in result.matches:
            self._update(self.tracks[t], det_cues[d], frame.frame_index)

        # 5. occlusion of this frame's detections sets the next predict's scale
        lambdas = self._occlusion_lambdas(det_cues)
        for t, d in result.matches:
            self.tracks[t].state.lam = float(lambdas[d])

        # 6. lifecycle of unmatched tracks
        for t in result.unmatched_tracks:
            trk = self.tracks[t]
            if trk.status is TrackStatus.TENTATIVE:
                trk.status = TrackStatus.REMOVED
            elif trk.status is TrackStatus.CONFIRMED:
                trk.status = TrackStatus.LOST
            if trk.status is TrackStatus.LOST and trk.time_since_update > cfg.max_age:
                trk.status = TrackStatus.REMOVED

        # 7. births from confident leftovers
        for d in result.unmatched_dets:
            if det_cues[d].score >= cfg.score_high:
                self.tracks.append(self._spawn(det_cues[d], frame.frame_index))

        self.tracks = [t for t in self.tracks if t.status is not TrackStatus.REMOVED]
        self.stats.max_live_tracks = max(self.stats.max_live_tracks, len(self.tracks))

        # 8. output confirmed tracks seen this frame
        rows = []
        for trk in sorted(self.tracks, key=lambda t: t.id):
            if trk.status is TrackStatus.CONFIRMED and trk.time_since_update == 0:
                x1, y1, x2, y2 = state_to_box(trk.state.x)
                rows.append(TrackOutputRow(frame.frame_index, trk.id, x1, y1, x2 - x1, y2 - y1, trk.last_score))
        self.stats.rows += len(rows)
        self.stats.frame_seconds.append(time.perf_counter() - started)
        return rows


def run_sequence(seq: Sequence, cfg: TrackerConfig, workers: int = 1) -> tuple[list[TrackOutputRow], RunStats]:
    tracker = Tracker(cfg, seq.intrinsics, workers)
    rows: list[TrackOutputRow] = []
    for frame in seq.frames():
        rows.extend(tracker.step(frame))
    return rows, tracker.stats
