"""CLEAR-MOT, identity F1 and HOTA over 2D boxes.

Tracks are passed around as ``{frame: {id: (x1, y1, x2, y2)}}``.  Only box IoU
is used for matching, whatever cue the tracker itself relied on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import MalformedRecord, MisalignedFrames, MissingFile
from .geometry import box_iou_matrix
from .ingest import Box, TrackOutputRow, read_mot_results

ALPHAS = tuple(round(0.05 * k, 2) for k in range(1, 20))
ALPHA_EPS = 1e-10

Frames = dict[int, dict[int, Box]]


# --------------------------------------------------------------------------
# inputs


def frames_from_rows(rows: Iterable[TrackOutputRow]) -> Frames:
    out: Frames = {}
    for r in rows:
        ids = out.setdefault(r.frame, {})
        if r.id in ids:
            raise MalformedRecord(f"frame {r.frame}: id {r.id} appears twice")
        ids[r.id] = (r.bb_left, r.bb_top, r.bb_left + r.bb_width, r.bb_top + r.bb_height)
    return out


def read_ground_truth(path, min_visibility: float = 0.0) -> Frames:
    """Parse ``frame,id,left,top,w,h,conf,class,visibility[,depth]`` lines."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    out: Frames = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) < 6:
            raise MalformedRecord(f"{path}:{lineno}: expected at least 6 columns")
        try:
            frame, tid = int(parts[0]), int(parts[1])
            x, y, w, h = (float(v) for v in parts[2:6])
            vis = float(parts[8]) if len(parts) > 8 else 1.0
        except ValueError as exc:
            raise MalformedRecord(f"{path}:{lineno}: {exc}") from exc
        if vis < min_visibility:
            continue
        ids = out.setdefault(frame, {})
        if tid in ids:
            raise MalformedRecord(f"{path}:{lineno}: id {tid} appears twice in frame {frame}")
        ids[tid] = (x, y, x + w, y + h)
    return out


def read_predictions(path) -> Frames:
    return frames_from_rows(read_mot_results(path))


def _frame_range(gt: Frames, pred: Frames, n_frames: Optional[int]) -> list[int]:
    last = n_frames if n_frames is not None else max(gt, default=0)
    bad = [t for t in pred if not 1 <= t <= last and pred[t]]
    if bad:
        raise MisalignedFrames(f"predictions for frames {sorted(bad)[:5]} outside ground-truth range 1..{last}")
    bad = [t for t in gt if t < 1]
    if bad:
        raise MisalignedFrames(f"ground truth has invalid frame indices {sorted(bad)[:5]}")
    return list(range(1, max(last, max(gt, default=0)) + 1))


def _frame_arrays(frames: Frames, t: int):
    items = sorted(frames.get(t, {}).items())
    return [i for i, _ in items], [b for _, b in items]


# --------------------------------------------------------------------------
# CLEAR-MOT


@dataclass
class ClearResult:
    mota: float
    fp: int
    fn: int
    id_switches: int
    matches: int
    gt_count: int


def clear_metrics(gt: Frames, pred: Frames, iou_threshold: float = 0.5, n_frames: Optional[int] = None) -> ClearResult:
    """Per-frame matching that keeps last frame's pairs when they still overlap,
    then maximises total IoU over the rest.  A switch is counted whenever a
    ground-truth object is matched to a different id than last time."""
    last_pred: dict[int, int] = {}  # gt id -> pred id it was last matched to
    last_gt: dict[int, int] = {}  # pred id -> gt id it was last matched to
    fp = fn = idsw = tp = total = 0
    for t in _frame_range(gt, pred, n_frames):
        g_ids, g_boxes = _frame_arrays(gt, t)
        p_ids, p_boxes = _frame_arrays(pred, t)
        total += len(g_ids)
        iou = box_iou_matrix(g_boxes, p_boxes)
        ok = iou >= iou_threshold
        pairs: list[tuple[int, int]] = []
        free_g, free_p = set(range(len(g_ids))), set(range(len(p_ids)))
        p_index = {pid: j for j, pid in enumerate(p_ids)}
        for i, gid in enumerate(g_ids):
            pid = last_pred.get(gid)
            j = p_index.get(pid)
            if j is not None and j in free_p and last_gt.get(pid) == gid and ok[i, j]:
                pairs.append((i, j))
                free_g.discard(i)
                free_p.discard(j)
        rg, rp = sorted(free_g), sorted(free_p)
        if rg and rp:
            sub = np.where(ok[np.ix_(rg, rp)], iou[np.ix_(rg, rp)], 0.0)
            rows, cols = linear_sum_assignment(sub, maximize=True)
            pairs += [(rg[r], rp[c]) for r, c in zip(rows, cols) if ok[rg[r], rp[c]]]
        for i, j in pairs:
            gid, pid = g_ids[i], p_ids[j]
            if gid in last_pred and last_pred[gid] != pid:
                idsw += 1
            last_pred[gid] = pid
            last_gt[pid] = gid
        tp += len(pairs)
        fp += len(p_ids) - len(pairs)
        fn += len(g_ids) - len(pairs)
    mota = 1.0 - (fp + fn + idsw) / max(total, 1)
    return ClearResult(mota, fp, fn, idsw, tp, total)


# --------------------------------------------------------------------------
# identity F1


@dataclass
class IdentityResult:
    idf1: float
    idtp: int
    idfp: int
    idfn: int
    mapping: dict[int, int] = field(default_factory=dict)


def _id_index(frames: Frames) -> dict[int, int]:
    ids = sorted({i for per in frames.values() for i in per})
    return {tid: k for k, tid in enumerate(ids)}


def _counts(frames: Frames, index: dict[int, int]) -> np.ndarray:
    c = np.zeros(len(index), dtype=np.int64)
    for per in frames.values():
        for tid in per:
            c[index[tid]] += 1
    return c


def identity_metrics(gt: Frames, pred: Frames, iou_threshold: float = 0.5, n_frames: Optional[int] = None) -> IdentityResult:
    frames = _frame_range(gt, pred, n_frames)
    gi, pi = _id_index(gt), _id_index(pred)
    overlap = np.zeros((len(gi), len(pi)), dtype=np.int64)
    for t in frames:
        g_ids, g_boxes = _frame_arrays(gt, t)
        p_ids, p_boxes = _frame_arrays(pred, t)
        if not g_ids or not p_ids:
            continue
        hit = box_iou_matrix(g_boxes, p_boxes) >= iou_threshold
        rows = np.array([gi[g] for g in g_ids])
        cols = np.array([pi[p] for p in p_ids])
        overlap[np.ix_(rows, cols)] += hit
    n_gt, n_pred = int(_counts(gt, gi).sum()), int(_counts(pred, pi).sum())
    mapping: dict[int, int] = {}
    idtp = 0
    if overlap.size:
        rows, cols = linear_sum_assignment(overlap, maximize=True)
        g_of = {k: tid for tid, k in gi.items()}
        p_of = {k: tid for tid, k in pi.items()}
        for r, c in zip(rows, cols):
            if overlap[r, c] > 0:
                idtp += int(overlap[r, c])
                mapping[g_of[r]] = p_of[c]
    idfp, idfn = n_pred - idtp, n_gt - idtp
    denom = 2 * idtp + idfp + idfn
    return IdentityResult(2 * idtp / denom if denom else 1.0, idtp, idfp, idfn, mapping)


def idf1(gt: Frames, pred: Frames, iou_threshold: float = 0.5, n_frames: Optional[int] = None) -> float:
    return identity_metrics(gt, pred, iou_threshold, n_frames).idf1


# --------------------------------------------------------------------------
# HOTA


@dataclass
class HotaResult:
    hota: float
    deta: float
    assa: float
    curve: list[tuple[float, float, float, float]]  # (alpha, hota, deta, assa)


def hota(gt: Frames, pred: Frames, n_frames: Optional[int] = None, alphas=ALPHAS) -> HotaResult:
    """Higher-order tracking accuracy averaged over localisation thresholds.

    Matching is redone for every alpha: among pairs with IoU >= alpha the
    largest matching is chosen, ties broken by IoU weighted with how strongly
    the two ids go together over the whole sequence.
    """
    frames = _frame_range(gt, pred, n_frames)
    gi, pi = _id_index(gt), _id_index(pred)
    g_count, p_count = _counts(gt, gi), _counts(pred, pi)
    n_gt, n_pred = int(g_count.sum()), int(p_count.sum())

    per_frame = []
    potential = np.zeros((len(gi), len(pi)))
    for t in frames:
        g_ids, g_boxes = _frame_arrays(gt, t)
        p_ids, p_boxes = _frame_arrays(pred, t)
        if not g_ids or not p_ids:
            continue
        sim = box_iou_matrix(g_boxes, p_boxes)
        rows = np.array([gi[g] for g in g_ids])
        cols = np.array([pi[p] for p in p_ids])
        denom = sim.sum(axis=1, keepdims=True) + sim.sum(axis=0, keepdims=True) - sim
        with np.errstate(divide="ignore", invalid="ignore"):
            potential[np.ix_(rows, cols)] += np.where(denom > 0, sim / denom, 0.0)
        per_frame.append((rows, cols, sim))
    alignment = potential / np.maximum(g_count[:, None] + p_count[None, :] - potential, 1e-12) if potential.size else potential

    curve = []
    for alpha in alphas:
        matched = np.zeros((len(gi), len(pi)), dtype=np.int64)
        tp = 0
        for rows, cols, sim in per_frame:
            eligible = sim >= alpha - ALPHA_EPS
            if not eligible.any():
                continue
            big = min(sim.shape) + 1.0
            score = np.where(eligible, big + alignment[np.ix_(rows, cols)] * sim, 0.0)
            r, c = linear_sum_assignment(score, maximize=True)
            keep = eligible[r, c]
            r, c = r[keep], c[keep]
            matched[rows[r], cols[c]] += 1
            tp += int(keep.sum())
        fn, fp = n_gt - tp, n_pred - tp
        if n_gt == 0 and n_pred == 0:
            deta = assa = 1.0
        else:
            deta = tp / (tp + fn + fp)
            if tp:
                denom = g_count[:, None] + p_count[None, :] - matched
                with np.errstate(divide="ignore", invalid="ignore"):
                    a = np.where(matched > 0, matched / denom, 0.0)
                assa = float((matched * a).sum() / tp)
            else:
                assa = 0.0
        curve.append((float(alpha), math.sqrt(deta * assa), float(deta), assa))
    arr = np.array([c[1:] for c in curve])
    return HotaResult(float(arr[:, 0].mean()), float(arr[:, 1].mean()), float(arr[:, 2].mean()), curve)


# --------------------------------------------------------------------------
# report


@dataclass
class EvalReport:
    mota: float
    idf1: float
    hota: float
    deta: float
    assa: float
    id_switches: int
    fp: int
    fn: int
    matches: int
    gt_count: int
    pred_count: int
    idtp: int
    idfp: int
    idfn: int
    curve: list[tuple[float, float, float, float]]

    def to_text(self) -> str:
        lines = [f"{k} = {v:.6f}" for k, v in (
            ("mota", self.mota), ("idf1", self.idf1), ("hota", self.hota), ("deta", self.deta), ("assa", self.assa),
        )]
        for k in ("id_switches", "fp", "fn", "matches", "gt_count", "pred_count", "idtp", "idfp", "idfn"):
            lines.append(f"{k} = {getattr(self, k)}")
        return "\n".join(lines) + "\n"

    def curve_csv(self) -> str:
        rows = ["alpha,hota,deta,assa"]
        rows += [f"{a:.2f},{h:.6f},{d:.6f},{s:.6f}" for a, h, d, s in self.curve]
        return "\n".join(rows) + "\n"


def evaluate(gt: Frames, pred: Frames, iou_threshold: float = 0.5, n_frames: Optional[int] = None) -> EvalReport:
    c = clear_metrics(gt, pred, iou_threshold, n_frames)
    i = identity_metrics(gt, pred, iou_threshold, n_frames)
    h = hota(gt, pred, n_frames)
    n_pred = sum(len(v) for v in pred.values())
    return EvalReport(
        c.mota, i.idf1, h.hota, h.deta, h.assa, c.id_switches, c.fp, c.fn, c.matches,
        c.gt_count, n_pred, i.idtp, i.idfp, i.idfn, h.curve,
    )


def evaluate_files(gt_path, pred_path, iou_threshold: float = 0.5, min_visibility: float = 0.0,
                   n_frames: Optional[int] = None) -> EvalReport:
    return evaluate(read_ground_truth(gt_path, min_visibility), read_predictions(pred_path), iou_threshold, n_frames)
