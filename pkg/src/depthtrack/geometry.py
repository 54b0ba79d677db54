"""Mask-guided point clouds, sparse voxel grids and voxel IoU.

Clouds are ``(N, 3)`` float64 arrays in camera coordinates: X and Y follow the
pinhole model, Z is the raw (scaled) depth value.  A pair of clouds is always
voxelized on a grid anchored at the pair's joint minimum corner, so both
grids share origin, size and dimensions.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import BothEmpty, DimensionMismatch, GridMismatch, NonPositiveVoxelSize
from .ingest import Box, CameraIntrinsics, RLEMask, decode_mask_rle

MAX_GRID_DIM = 512
GRID_TOL = 1e-9


@dataclass(eq=False)
class PointCloud:
    points: np.ndarray
    source_box: Optional[Box] = None

    def __post_init__(self):
        # column-major: every per-axis pass below reads contiguous memory
        self.points = np.asfortranarray(np.asarray(self.points, dtype=np.float64).reshape(-1, 3))
        self._bounds = None

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-axis minimum and maximum (cached; points must not be mutated)."""
        if self._bounds is None:
            self._bounds = (self.points.min(axis=0), self.points.max(axis=0))
        return self._bounds

    @property
    def empty(self) -> bool:
        return self.points.shape[0] == 0


@dataclass(frozen=True, eq=False)
class AABB:
    p_min: np.ndarray
    p_max: np.ndarray

    def contains(self, points: np.ndarray) -> bool:
        return bool(np.all(points >= self.p_min) and np.all(points <= self.p_max))


@dataclass(eq=False)
class VoxelGrid:
    origin: np.ndarray
    voxel_size: float
    dims: tuple[int, int, int]
    keys: np.ndarray  # sorted unique linear indices of occupied voxels
    capped: bool = False

    @property
    def indices(self) -> np.ndarray:
        ny, nz = self.dims[1], self.dims[2]
        k = self.keys
        return np.stack([k // (ny * nz), (k // nz) % ny, k % nz], axis=1)

    @property
    def occupied(self) -> set[tuple[int, int, int]]:
        return {tuple(int(v) for v in row) for row in self.indices}

    def __len__(self) -> int:
        return int(self.keys.size)


@dataclass
class VoxelStats:
    """Counters shared across IoU evaluations of one run."""

    pairs: int = 0
    pruned: int = 0
    capped: int = 0


def _as_mask(mask, shape) -> np.ndarray:
    if isinstance(mask, RLEMask):
        mask = decode_mask_rle(mask)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise DimensionMismatch(f"mask shape {mask.shape} does not match depth shape {shape}")
    return mask


def box_mask(bbox: Box, shape) -> np.ndarray:
    """Boolean image of the pixels covered by ``bbox`` (clipped)."""
    h, w = shape
    x1 = max(0, int(math.floor(bbox[0])))
    y1 = max(0, int(math.floor(bbox[1])))
    x2 = min(w, int(math.ceil(bbox[2])))
    y2 = min(h, int(math.ceil(bbox[3])))
    out = np.zeros(shape, dtype=bool)
    if x2 > x1 and y2 > y1:
        out[y1:y2, x1:x2] = True
    return out


def _window(mask: np.ndarray) -> tuple[slice, slice]:
    """Smallest row/column slices containing every set pixel."""
    r = np.flatnonzero(mask.any(axis=1))
    if r.size == 0:
        return slice(0, 0), slice(0, 0)
    c = np.flatnonzero(mask[r[0]:r[-1] + 1].any(axis=0))
    return slice(int(r[0]), int(r[-1]) + 1), slice(int(c[0]), int(c[-1]) + 1)


def backproject(depth: np.ndarray, mask, bbox: Box, intrinsics: CameraIntrinsics) -> PointCloud:
    """Lift every masked pixel with positive depth into camera space.

    Pixel ``(u, v)`` is column ``u``, row ``v``.  The projection centre is the
    box centre or the fixed principal point, per ``intrinsics.center_mode``.
    """
    depth = np.asarray(depth)
    mask = _as_mask(mask, depth.shape)
    rows, cols = _window(mask)
    valid = mask[rows, cols] & (depth[rows, cols] > 0)
    v, u = np.nonzero(valid)
    v = v + rows.start
    u = u + cols.start
    cx, cy = intrinsics.projection_center(bbox)
    pts = np.empty((u.size, 3), dtype=np.float64, order="F")
    z = pts[:, 2]
    z[:] = depth[v, u]
    np.multiply(u - cx, z, out=pts[:, 0])
    pts[:, 0] /= intrinsics.fx
    np.multiply(v - cy, z, out=pts[:, 1])
    pts[:, 1] /= intrinsics.fy
    return PointCloud(pts, tuple(bbox))


def mean_masked_depth(depth: np.ndarray, mask, bbox: Optional[Box] = None) -> float:
    """Mean of the valid (positive) depths under ``mask``.

    Falls back to the valid depths inside ``bbox`` when the mask holds none,
    and to 0.0 when that region is invalid as well.
    """
    depth = np.asarray(depth)
    mask = _as_mask(mask, depth.shape)
    rows, cols = _window(mask)
    vals = depth[rows, cols][mask[rows, cols]]
    vals = vals[vals > 0]
    if vals.size == 0 and bbox is not None:
        region = depth[box_mask(bbox, depth.shape)]
        vals = region[region > 0]
    if vals.size == 0:
        return 0.0
    return float(np.mean(vals, dtype=np.float64))


def joint_bounds(a: PointCloud, b: PointCloud) -> AABB:
    present = [c.bounds for c in (a, b) if not c.empty]
    if not present:
        raise BothEmpty("cannot bound two empty clouds")
    lo = np.min([p[0] for p in present], axis=0)
    hi = np.max([p[1] for p in present], axis=0)
    return AABB(lo, hi)


def grid_shape(bounds: AABB, voxel_size: float, max_dim: int = MAX_GRID_DIM) -> tuple[float, tuple[int, int, int], bool]:
    """Effective voxel size and grid dims for ``bounds``.

    When an axis would exceed ``max_dim`` cells the voxel size is multiplied
    by the smallest integer factor that brings every axis within the cap.
    """
    if not voxel_size > 0:
        raise NonPositiveVoxelSize(f"voxel size must be positive, got {voxel_size}")
    extent = bounds.p_max - bounds.p_min

    def dims_for(size):
        d = np.maximum(np.ceil(extent / size), 1.0)
        return (int(d[0]), int(d[1]), int(d[2]))

    dims = dims_for(voxel_size)
    if max(dims) <= max_dim:
        return voxel_size, dims, False
    factor = int(math.ceil(max(dims) / max_dim))
    size = voxel_size * factor
    dims = dims_for(size)
    while max(dims) > max_dim:  # float rounding guard
        factor += 1
        size = voxel_size * factor
        dims = dims_for(size)
    return size, dims, True


def _voxel_keys(points: np.ndarray, origin: np.ndarray, size: float, dims) -> np.ndarray:
    """Sorted unique linear indices ``(ix * ny + iy) * nz + iz`` of occupied cells."""
    if points.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    keys = None
    for axis in range(3):
        t = points[:, axis] - origin[axis]
        t /= size
        np.floor(t, out=t)
        idx = t.astype(np.int64)
        np.maximum(idx, 0, out=idx)
        np.minimum(idx, dims[axis] - 1, out=idx)
        keys = idx if keys is None else keys * dims[axis] + idx
    # clouds arrive in pixel order, so neighbours mostly share a cell: dropping
    # repeats first leaves far fewer keys to sort as cells grow
    fresh = np.empty(keys.size, dtype=bool)
    fresh[0] = True
    np.not_equal(keys[1:], keys[:-1], out=fresh[1:])
    return np.unique(keys[fresh])


def voxelize(cloud: PointCloud, bounds: AABB, voxel_size: float, max_dim: int = MAX_GRID_DIM) -> VoxelGrid:
    """Sparse occupancy of ``cloud`` on the grid spanned by ``bounds``.

    Indices are ``floor((p - p_min) / size)`` clamped into the grid, so a
    point lying exactly on ``p_max`` lands in the last cell.
    """
    size, dims, capped = grid_shape(bounds, voxel_size, max_dim)
    keys = _voxel_keys(cloud.points, bounds.p_min, size, dims)
    return VoxelGrid(np.array(bounds.p_min, dtype=np.float64), size, dims, keys, capped)


def voxel_iou_3d(a: VoxelGrid, b: VoxelGrid) -> float:
    if (
        a.dims != b.dims
        or abs(a.voxel_size - b.voxel_size) > GRID_TOL
        or np.any(np.abs(np.asarray(a.origin) - np.asarray(b.origin)) > GRID_TOL)
    ):
        raise GridMismatch("voxel grids do not share origin, size and dims")
    inter = np.intersect1d(a.keys, b.keys, assume_unique=True).size
    union = a.keys.size + b.keys.size - inter
    if union == 0:
        return 0.0
    return inter / union


def cloud_iou(a: PointCloud, b: PointCloud, voxel_size: float, stats: Optional[VoxelStats] = None) -> float:
    """Voxel IoU of two clouds on their joint grid; 0 when either is empty."""
    if a.empty or b.empty:
        return 0.0
    amin, amax = a.bounds
    bmin, bmax = b.bounds
    bounds = AABB(np.minimum(amin, bmin), np.maximum(amax, bmax))
    size, dims, capped = grid_shape(bounds, voxel_size)
    if stats is not None:
        stats.pairs += 1
        stats.capped += int(capped)
    # boxes further apart than one cell along any axis cannot share a voxel
    gap = np.maximum(bmin - amax, amin - bmax)
    if np.any(gap > size * (1.0 + 1e-9)):
        if stats is not None:
            stats.pruned += 1
        return 0.0
    ka = _voxel_keys(a.points, bounds.p_min, size, dims)
    kb = _voxel_keys(b.points, bounds.p_min, size, dims)
    inter = np.intersect1d(ka, kb, assume_unique=True).size
    union = ka.size + kb.size - inter
    return inter / union if union else 0.0


def pairwise_voxel_iou(
    dets: Sequence[PointCloud],
    trks: Sequence[PointCloud],
    voxel_size: float,
    stats: Optional[VoxelStats] = None,
    workers: int = 1,
) -> np.ndarray:
    """``|dets| x |trks|`` matrix of voxel IoUs, each pair on its own grid."""
    if not voxel_size > 0:
        raise NonPositiveVoxelSize(f"voxel size must be positive, got {voxel_size}")
    out = np.zeros((len(dets), len(trks)), dtype=np.float64)
    pairs = [(i, j) for i in range(len(dets)) for j in range(len(trks))]
    if workers > 1 and len(pairs) > 1:
        # per-worker counters, merged afterwards so totals stay deterministic
        def job(chunk):
            local = VoxelStats()
            return [(i, j, cloud_iou(dets[i], trks[j], voxel_size, local)) for i, j in chunk], local

        chunks = [pairs[k::workers] for k in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for results, local in pool.map(job, chunks):
                for i, j, v in results:
                    out[i, j] = v
                if stats is not None:
                    stats.pairs += local.pairs
                    stats.pruned += local.pruned
                    stats.capped += local.capped
    else:
        for i, j in pairs:
            out[i, j] = cloud_iou(dets[i], trks[j], voxel_size, stats)
    return out


def box_iou(a: Box, b: Box) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def box_iou_matrix(a, b) -> np.ndarray:
    """Vectorised 2D IoU between ``(N, 4)`` and ``(M, 4)`` xyxy boxes."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out
