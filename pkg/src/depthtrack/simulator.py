"""Synthetic scenes with exact ground truth.

Each object is an axis-aligned 3D box moving along a parametric path in
camera coordinates.  Only the box's front face is rendered: it projects to an
image rectangle (edges rounded to whole pixels) at constant depth ``Z - hz``.
A z-buffer resolves overlaps, so nearer objects carve the masks of the ones
behind them.  Depth is written in the scaled convention used by the tracker
(larger = farther), over a constant background plane.

Randomness
----------
All sampling uses numpy's PCG64 generator seeded through ``SeedSequence``:

* ``default_rng([seed, 0])``      identity embeddings
* ``default_rng([seed, 0, 2])``   random scene layout (crowd preset)
* ``default_rng([seed, t])``      detection noise of frame ``t`` (1-based)
* ``default_rng([seed, t, 1])``   per-pixel depth noise of frame ``t``

Within a frame, ground-truth objects are visited in increasing id and each
one always consumes, in order: one uniform (miss test), four normals (box
jitter x1, y1, x2, y2), one normal (score), ``embedding_dim`` normals.  Then
the false-positive slot consumes one uniform (inject test), two uniforms
(width, height), two uniforms (left, top), one uniform (score) and
``embedding_dim`` normals.  Draws happen whether or not they are used, so
changing one rate never reshuffles the other streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import box_mask
from .ingest import (
    GT_NAME,
    CameraIntrinsics,
    Detection,
    ProjectionCenter,
    Sequence,
    encode_mask_rle,
    parse_sequence,
    write_sequence,
)

Vec3 = tuple[float, float, float]


@dataclass
class Trajectory:
    """Centre path of one object; ``t`` counts frames from 0.

    linear / approach:  start + t * velocity
    circular:           centre + radius * (cos, sin) of (phase + omega * t)
                        in the X-Y plane (``plane="xy"``) or X-Z plane (``"xz"``)
    """

    kind: str
    start: Vec3 = (0.0, 0.0, 100.0)
    velocity: Vec3 = (0.0, 0.0, 0.0)
    radius: float = 0.0
    omega: float = 0.0
    phase: float = 0.0
    plane: str = "xy"

    def position(self, t: float) -> np.ndarray:
        start = np.asarray(self.start, dtype=np.float64)
        if self.kind in ("linear", "approach"):
            return start + t * np.asarray(self.velocity, dtype=np.float64)
        if self.kind == "circular":
            a = self.phase + self.omega * t
            off = np.zeros(3)
            if self.plane == "xy":
                off[0], off[1] = math.cos(a), math.sin(a)
            else:
                off[0], off[2] = math.cos(a), math.sin(a)
            return start + self.radius * off
        raise ValueError(f"unknown trajectory kind {self.kind!r}")


@dataclass
class ObjectSpec:
    trajectory: Trajectory
    half_size: Vec3 = (1.0, 2.0, 0.5)


@dataclass
class DetectionNoise:
    bbox_sigma: float = 0.0
    miss_rate: float = 0.0
    fp_rate: float = 0.0
    score_sigma: float = 0.0
    occlusion_score_drop: float = 0.0
    occlusion_miss: float = 1.0  # 1: miss chance grows to certainty as visibility falls to 0
    fp_score: tuple[float, float] = (0.1, 0.5)
    fp_size: tuple[float, float] = (20.0, 80.0)
    embedding_dim: int = 0
    embedding_sigma: float = 0.0

    def __post_init__(self):
        for name in ("miss_rate", "fp_rate", "occlusion_score_drop", "occlusion_miss"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.bbox_sigma < 0 or self.score_sigma < 0 or self.embedding_sigma < 0:
            raise ValueError("noise scales must be non-negative")


@dataclass
class SceneSpec:
    objects: list[ObjectSpec]
    n_frames: int
    width: int = 640
    height: int = 480
    fx: float = 800.0
    fy: float = 800.0
    noise: DetectionNoise = field(default_factory=DetectionNoise)
    background_depth: float = 240.0
    depth_noise: float = 0.0
    projection_center: str = "box"
    seed: int = 0

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        mode = ProjectionCenter(self.projection_center)
        if mode is ProjectionCenter.PRINCIPAL_POINT:
            return CameraIntrinsics(self.fx, self.fy, self.width, self.height, mode, self.width / 2.0, self.height / 2.0)
        return CameraIntrinsics(self.fx, self.fy, self.width, self.height, mode)


@dataclass
class GTEntry:
    id: int
    bbox: tuple[float, float, float, float]
    depth: float
    visibility: float
    visible_box: Optional[tuple[float, float, float, float]] = None


@dataclass
class GroundTruth:
    width: int
    height: int
    frames: dict[int, list[GTEntry]] = field(default_factory=dict)

    def to_text(self) -> str:
        out = []
        for t in sorted(self.frames):
            for e in self.frames[t]:
                x1, y1, x2, y2 = e.bbox
                out.append(
                    f"{t},{e.id},{x1:.2f},{y1:.2f},{x2 - x1:.2f},{y2 - y1:.2f},1,1,{e.visibility:.6f},{e.depth:.6f}\n"
                )
        return "".join(out)


@dataclass
class DetectionDraft:
    """A detection before its mask is attached; ``source`` is None for clutter."""

    bbox: tuple[float, float, float, float]
    score: float
    source: Optional[int]
    embedding: Optional[tuple[float, ...]] = None


# --------------------------------------------------------------------------
# rendering


def _project(spec: SceneSpec, obj: ObjectSpec, t: int):
    """Snapped, clipped image rectangle and front-face depth, or None."""
    c = obj.trajectory.position(t - 1)
    hx, hy, hz = obj.half_size
    zf = float(np.float32(c[2] - hz))  # depths are stored as float32
    if zf <= 1e-3:
        return None
    cx0, cy0 = spec.width / 2.0, spec.height / 2.0
    x1 = round(cx0 + spec.fx * (c[0] - hx) / zf)
    x2 = round(cx0 + spec.fx * (c[0] + hx) / zf)
    y1 = round(cy0 + spec.fy * (c[1] - hy) / zf)
    y2 = round(cy0 + spec.fy * (c[1] + hy) / zf)
    x1, x2 = max(0, x1), min(spec.width, x2)
    y1, y2 = max(0, y1), min(spec.height, y2)
    if x2 <= x1 or y2 <= y1:
        return None
    return (x1, y1, x2, y2), zf


def render_frame(spec: SceneSpec, t: int):
    """Depth map, per-object visible masks and ground truth for frame ``t``."""
    depth = np.full((spec.height, spec.width), spec.background_depth, dtype=np.float64)
    owner = np.full((spec.height, spec.width), -1, dtype=np.int64)
    placed = []
    for oid, obj in enumerate(spec.objects, 1):
        proj = _project(spec, obj, t)
        if proj is not None:
            placed.append((oid, proj[0], proj[1]))
    # paint far to near; equal depth resolves towards the lower id
    for oid, (x1, y1, x2, y2), zf in sorted(placed, key=lambda p: (-p[2], -p[0])):
        depth[y1:y2, x1:x2] = zf
        owner[y1:y2, x1:x2] = oid
    if spec.depth_noise > 0:
        rng = np.random.default_rng([spec.seed, t, 1])
        depth = np.maximum(depth + rng.normal(0.0, spec.depth_noise, depth.shape), 1e-3)
    masks, entries = {}, []
    for oid, box, zf in sorted(placed):
        x1, y1, x2, y2 = box
        m = owner == oid
        visible = int(m.sum())
        vis_box = None
        if visible:
            rows = np.flatnonzero(m.any(axis=1))
            cols = np.flatnonzero(m.any(axis=0))
            vis_box = (float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))
        masks[oid] = m
        entries.append(GTEntry(oid, tuple(float(v) for v in box), zf, visible / ((x2 - x1) * (y2 - y1)), vis_box))
    return depth.astype(np.float32), masks, entries


# --------------------------------------------------------------------------
# detection noise


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def identity_embeddings(seed: int, n_ids: int, dim: int) -> dict[int, np.ndarray]:
    rng = np.random.default_rng([seed, 0])
    return {i: _unit(rng.normal(size=dim)) for i in range(1, n_ids + 1)} if dim else {}


def _clip_box(box, width, height):
    x1, y1, x2, y2 = box
    x1 = min(max(x1, 0.0), width - 1.0)
    y1 = min(max(y1, 0.0), height - 1.0)
    x2 = min(max(x2, x1 + 1.0), float(width))
    y2 = min(max(y2, y1 + 1.0), float(height))
    return (round(x1, 2), round(y1, 2), round(x2, 2), round(y2, 2))


def degrade_frame(
    entries: list[GTEntry],
    noise: DetectionNoise,
    rng: np.random.Generator,
    width: int,
    height: int,
    embeddings: Optional[dict[int, np.ndarray]] = None,
) -> list[DetectionDraft]:
    dim = noise.embedding_dim
    out = []
    for e in sorted(entries, key=lambda e: e.id):
        u_miss = rng.random()
        jitter = rng.normal(size=4)
        s_noise = rng.normal()
        e_noise = rng.normal(size=dim) if dim else None
        p_miss = 1.0 - (1.0 - noise.miss_rate) * (1.0 - noise.occlusion_miss * (1.0 - e.visibility))
        if e.visible_box is None or e.visibility <= 0 or u_miss < p_miss:
            continue
        box = _clip_box(np.asarray(e.visible_box) + noise.bbox_sigma * jitter, width, height)
        score = 1.0 - noise.occlusion_score_drop * (1.0 - e.visibility) - noise.score_sigma * abs(s_noise)
        emb = None
        if dim and embeddings:
            emb = tuple(float(v) for v in _unit(embeddings[e.id] + noise.embedding_sigma * e_noise))
        out.append(DetectionDraft(box, round(min(max(score, 0.0), 1.0), 4), e.id, emb))

    u_fp = rng.random()
    size = rng.random(2)
    pos = rng.random(2)
    u_score = rng.random()
    fp_emb = rng.normal(size=dim) if dim else None
    if u_fp < noise.fp_rate:
        lo, hi = noise.fp_size
        w, h = lo + (hi - lo) * size[0], lo + (hi - lo) * size[1]
        x1, y1 = pos[0] * max(width - w, 1.0), pos[1] * max(height - h, 1.0)
        box = _clip_box((x1, y1, x1 + w, y1 + h), width, height)
        a, b = noise.fp_score
        emb = tuple(float(v) for v in _unit(fp_emb)) if dim else None
        out.append(DetectionDraft(box, round(a + (b - a) * u_score, 4), None, emb))
    return out


def degrade(gt: GroundTruth, noise: DetectionNoise, seed: int, embeddings=None) -> dict[int, list[DetectionDraft]]:
    """Noisy detections for every frame of ``gt`` (frame streams per module doc)."""
    return {
        t: degrade_frame(gt.frames.get(t, []), noise, np.random.default_rng([seed, t]), gt.width, gt.height, embeddings)
        for t in sorted(gt.frames)
    }


# --------------------------------------------------------------------------
# whole scenes


def simulate(spec: SceneSpec):
    """Render everything in memory: (depths, detections, ground truth)."""
    gt = GroundTruth(spec.width, spec.height)
    depths, detections = [], {}
    embeddings = identity_embeddings(spec.seed, len(spec.objects), spec.noise.embedding_dim)
    for t in range(1, spec.n_frames + 1):
        depth, masks, entries = render_frame(spec, t)
        gt.frames[t] = entries
        drafts = degrade_frame(entries, spec.noise, np.random.default_rng([spec.seed, t]), spec.width, spec.height, embeddings)
        dets = []
        for d in drafts:
            region = box_mask(d.bbox, depth.shape)
            mask = masks[d.source] & region if d.source is not None else region
            dets.append(Detection(d.bbox, d.score, encode_mask_rle(mask), d.embedding))
        if dets:
            detections[t] = dets
        depths.append(depth)
    return depths, detections, gt


def generate_scene(spec: SceneSpec, out_dir) -> tuple[Sequence, GroundTruth]:
    out_dir = Path(out_dir)
    depths, detections, gt = simulate(spec)
    write_sequence(out_dir, spec.intrinsics, depths, detections)
    (out_dir / GT_NAME).write_text(gt.to_text())
    return parse_sequence(out_dir), gt


# --------------------------------------------------------------------------
# presets


def _image_to_world(u: float, v: float, zf: float, spec_w: int, spec_h: int, f: float) -> tuple[float, float]:
    return (u - spec_w / 2.0) * zf / f, (v - spec_h / 2.0) * zf / f


def crossing_preset(seed: int = 42, n_frames: int = 60) -> SceneSpec:
    """Two objects of equal image size swapping places at depths 50 and 100.

    The farther one is twice as large in 3D so both project to 60x120 px;
    they move 2.5 px/frame in opposite directions and cross at mid-sequence,
    when the nearer one hides the other completely.
    """
    width, height, f = 640, 480, 800.0
    mid = (n_frames + 1) / 2.0
    objects = []
    for zf, direction in ((50.0, 1.0), (100.0, -1.0)):
        hz = 0.5
        hx, hy = 30.0 * zf / f, 60.0 * zf / f
        u0 = width / 2.0 - direction * 2.5 * (mid - 1)
        x0, y0 = _image_to_world(u0, height / 2.0, zf, width, height, f)
        vx = direction * 2.5 * zf / f
        objects.append(ObjectSpec(Trajectory("linear", (x0, y0, zf + hz), (vx, 0.0, 0.0)), (hx, hy, hz)))
    noise = DetectionNoise(bbox_sigma=1.0, miss_rate=0.02, fp_rate=0.0, score_sigma=0.05, occlusion_score_drop=0.6)
    return SceneSpec(objects, n_frames, width, height, f, f, noise, seed=seed)


def crowd_preset(seed: int = 0, n_frames: int = 100, n_objects: int = 10) -> SceneSpec:
    """Mixed linear, circular and depth-approach motion of ``n_objects`` boxes."""
    width, height, f = 640, 480, 800.0
    rng = np.random.default_rng([seed, 0, 2])
    kinds = ["linear", "circular", "approach"]
    objects = []
    for k in range(n_objects):
        kind = kinds[k % 3]
        zf = float(rng.uniform(40.0, 180.0))
        w_px, h_px = float(rng.uniform(30, 70)), float(rng.uniform(60, 140))
        hx, hy, hz = w_px / 2 * zf / f, h_px / 2 * zf / f, 0.5
        u = float(rng.uniform(100, width - 100))
        v = float(rng.uniform(120, height - 120))
        x0, y0 = _image_to_world(u, v, zf, width, height, f)
        speed = float(rng.uniform(0.5, 2.5)) * zf / f
        heading = float(rng.uniform(0, 2 * math.pi))
        if kind == "linear":
            traj = Trajectory("linear", (x0, y0, zf + hz), (speed * math.cos(heading), 0.3 * speed * math.sin(heading), 0.0))
        elif kind == "circular":
            r = float(rng.uniform(40, 90)) * zf / f
            om = float(rng.choice([-1, 1])) * float(rng.uniform(0.02, 0.05))
            traj = Trajectory("circular", (x0, y0, zf + hz), radius=r, omega=om, phase=float(rng.uniform(0, 2 * math.pi)))
        else:
            traj = Trajectory("approach", (x0, y0, zf + hz), (0.0, 0.0, -float(rng.uniform(0.05, 0.25))))
        objects.append(ObjectSpec(traj, (hx, hy, hz)))
    noise = DetectionNoise(bbox_sigma=1.5, miss_rate=0.05, fp_rate=0.05, score_sigma=0.05, occlusion_score_drop=0.6)
    return SceneSpec(objects, n_frames, width, height, f, f, noise, depth_noise=0.1, seed=seed)


def approach_preset(seed: int = 0, n_frames: int = 60) -> SceneSpec:
    """One object closing in along the optical axis with little 2D motion."""
    obj = ObjectSpec(Trajectory("approach", (0.0, 0.0, 150.5), (0.02, 0.0, -1.5)), (4.0, 8.0, 0.5))
    return SceneSpec([obj], n_frames, noise=DetectionNoise(bbox_sigma=0.5, score_sigma=0.02), seed=seed)


def circular_preset(seed: int = 0, n_frames: int = 80) -> SceneSpec:
    objs = [
        ObjectSpec(Trajectory("circular", (0.0, 0.0, 80.5), radius=8.0, omega=0.08, plane="xz"), (2.0, 4.0, 0.5)),
        ObjectSpec(Trajectory("circular", (0.0, 2.0, 120.5), radius=12.0, omega=-0.06, phase=math.pi), (3.0, 6.0, 0.5)),
    ]
    return SceneSpec(objs, n_frames, noise=DetectionNoise(bbox_sigma=1.0, miss_rate=0.02, score_sigma=0.05), seed=seed)


PRESETS = {
    "crossing": crossing_preset,
    "crowd": crowd_preset,
    "approach": approach_preset,
    "circular": circular_preset,
}


def preset(name: str, seed: int, n_frames: Optional[int] = None) -> SceneSpec:
    try:
        builder = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return builder(seed) if n_frames is None else builder(seed, n_frames)
