"""On-disk sequence format and MOT-style result files.

A sequence directory looks like::

    root/
      manifest              key = value text (intrinsics, frame count)
      det/detections.txt    one JSON object per line, grouped by frame
      depth/000001.gdpt     per-frame depth, 16-byte header + float32 payload
      gt.txt                optional, written by the simulator

Depth files start with the magic ``GDPT`` followed by little-endian uint32
width, height and flags (always 0), then ``width * height`` little-endian
float32 values in row-major order.  Larger depth means farther from the
camera; 0 marks an invalid pixel.

Masks are run-length encoded in column-major order with the first run
counting zeros (the COCO convention).
"""

from __future__ import annotations

import enum
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence as Seq

import numpy as np

from .errors import (
    DimensionMismatch,
    LengthMismatch,
    MalformedManifest,
    MalformedRecord,
    MissingFile,
    NonMonotonicFrameIndex,
)

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest"
DETECTIONS_PATH = Path("det") / "detections.txt"
DEPTH_DIR = "depth"
GT_NAME = "gt.txt"
FORMAT_TAG = "gdpt-sequence/1"

DEPTH_MAGIC = b"GDPT"
_HEADER = struct.Struct("<4sIII")
EMBEDDING_NORM_TOL = 1e-6

Box = tuple[float, float, float, float]


class ProjectionCenter(str, enum.Enum):
    BOX_CENTER = "box"
    PRINCIPAL_POINT = "principal"


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    width: int
    height: int
    center_mode: ProjectionCenter = ProjectionCenter.BOX_CENTER
    cx: Optional[float] = None
    cy: Optional[float] = None

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise MalformedManifest(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (self.width > 0 and self.height > 0):
            raise MalformedManifest(f"image size must be positive, got {self.width}x{self.height}")
        if self.center_mode is ProjectionCenter.PRINCIPAL_POINT:
            if self.cx is None or self.cy is None:
                raise MalformedManifest("principal projection centre needs cx and cy")
            if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
                raise MalformedManifest(f"principal point ({self.cx}, {self.cy}) outside the image")

    def projection_center(self, bbox: Box) -> tuple[float, float]:
        """Reference pixel (c_x, c_y) used when lifting pixels of ``bbox``."""
        if self.center_mode is ProjectionCenter.BOX_CENTER:
            return (bbox[0] + bbox[2]) / 2.0, (bbox[1] + bbox[3]) / 2.0
        return float(self.cx), float(self.cy)


@dataclass(frozen=True)
class RLEMask:
    width: int
    height: int
    counts: tuple[int, ...]

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise MalformedRecord("RLE counts must be non-negative")


def decode_mask_rle(mask: RLEMask) -> np.ndarray:
    """Expand an RLE mask to a ``(height, width)`` boolean array."""
    area = mask.width * mask.height
    counts = np.asarray(mask.counts, dtype=np.int64)
    total = int(counts.sum()) if counts.size else 0
    if total != area:
        raise LengthMismatch(f"RLE counts sum to {total}, mask area is {area}")
    values = np.zeros(counts.size, dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, counts)
    return flat.reshape(mask.width, mask.height).T


def encode_mask_rle(mask: np.ndarray) -> RLEMask:
    """Canonical column-major, zeros-first RLE of a 2D binary array."""
    mask = np.asarray(mask, dtype=bool)
    height, width = mask.shape
    flat = mask.T.ravel()
    if flat.size == 0:
        return RLEMask(width, height, ())
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return RLEMask(width, height, tuple(int(r) for r in runs))


@dataclass
class Detection:
    bbox: Box
    score: float
    mask: RLEMask
    embedding: Optional[tuple[float, ...]] = None

    @property
    def center(self) -> tuple[float, float]:
        x1, y1, x2, y2 = self.bbox
        return (x1 + x2) / 2.0, (y1 + y2) / 2.0


@dataclass
class FrameRecord:
    frame_index: int
    depth: np.ndarray
    detections: list[Detection]
    masks: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.masks:
            self.masks = [decode_mask_rle(d.mask) for d in self.detections]


@dataclass(frozen=True)
class TrackOutputRow:
    frame: int
    id: int
    bb_left: float
    bb_top: float
    bb_width: float
    bb_height: float
    conf: float


# --------------------------------------------------------------------------
# depth files


def depth_path(root: Path, frame_index: int) -> Path:
    return Path(root) / DEPTH_DIR / f"{frame_index:06d}.gdpt"


def write_depth(path: Path, depth: np.ndarray) -> None:
    depth = np.ascontiguousarray(depth, dtype="<f4")
    height, width = depth.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DEPTH_MAGIC, width, height, 0))
        fh.write(depth.tobytes(order="C"))


def read_depth_header(path: Path) -> tuple[int, int]:
    try:
        with open(path, "rb") as fh:
            head = fh.read(_HEADER.size)
    except FileNotFoundError as exc:
        raise MissingFile(str(path)) from exc
    if len(head) != _HEADER.size:
        raise MalformedRecord(f"{path}: truncated header")
    magic, width, height, flags = _HEADER.unpack(head)
    if magic != DEPTH_MAGIC or flags != 0:
        raise MalformedRecord(f"{path}: bad depth header")
    size = path.stat().st_size
    expected = _HEADER.size + 4 * width * height
    if size != expected:
        raise DimensionMismatch(f"{path}: payload is {size - _HEADER.size} bytes, header declares {width}x{height}")
    return width, height


def read_depth(path: Path, width: Optional[int] = None, height: Optional[int] = None) -> np.ndarray:
    w, h = read_depth_header(path)
    if (width is not None and w != width) or (height is not None and h != height):
        raise DimensionMismatch(f"{path}: depth is {w}x{h}, expected {width}x{height}")
    raw = Path(path).read_bytes()[_HEADER.size:]
    depth = np.frombuffer(raw, dtype="<f4").reshape(h, w)
    if not np.all(np.isfinite(depth)) or np.any(depth < 0):
        raise MalformedRecord(f"{path}: depth values must be finite and non-negative")
    return depth


# --------------------------------------------------------------------------
# manifest


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_manifest(intrinsics: CameraIntrinsics, frame_count: int, extra: Optional[dict] = None) -> str:
    lines = [
        f"format = {FORMAT_TAG}",
        f"frame_count = {frame_count}",
        f"width = {intrinsics.width}",
        f"height = {intrinsics.height}",
        f"fx = {_format_value(float(intrinsics.fx))}",
        f"fy = {_format_value(float(intrinsics.fy))}",
        f"projection_center = {intrinsics.center_mode.value}",
    ]
    if intrinsics.center_mode is ProjectionCenter.PRINCIPAL_POINT:
        lines.append(f"cx = {_format_value(float(intrinsics.cx))}")
        lines.append(f"cy = {_format_value(float(intrinsics.cy))}")
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


_CORE_KEYS = {"format", "frame_count", "width", "height", "fx", "fy", "projection_center", "cx", "cy"}


def parse_manifest(text: str) -> tuple[CameraIntrinsics, int, dict]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise MalformedManifest(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise MalformedManifest(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    if values.get("format") != FORMAT_TAG:
        raise MalformedManifest(f"unsupported format {values.get('format')!r}")
    try:
        mode = ProjectionCenter(values.get("projection_center", ProjectionCenter.BOX_CENTER.value))
        intrinsics = CameraIntrinsics(
            fx=float(values["fx"]),
            fy=float(values["fy"]),
            width=int(values["width"]),
            height=int(values["height"]),
            center_mode=mode,
            cx=float(values["cx"]) if "cx" in values else None,
            cy=float(values["cy"]) if "cy" in values else None,
        )
        frame_count = int(values["frame_count"])
    except KeyError as exc:
        raise MalformedManifest(f"missing key {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise MalformedManifest(str(exc)) from exc
    if frame_count < 0:
        raise MalformedManifest("frame_count must be non-negative")
    extra = {k: v for k, v in values.items() if k not in _CORE_KEYS}
    return intrinsics, frame_count, extra


# --------------------------------------------------------------------------
# detections


def format_detection(frame_index: int, det: Detection) -> str:
    record = {
        "frame": frame_index,
        "bbox": [float(v) for v in det.bbox],
        "score": float(det.score),
        "size": [det.mask.height, det.mask.width],
        "counts": list(det.mask.counts),
    }
    if det.embedding is not None:
        record["embedding"] = [float(v) for v in det.embedding]
    return json.dumps(record, separators=(",", ":"))


def parse_detection(line: str, intrinsics: CameraIntrinsics, where: str = "") -> tuple[int, Detection]:
    try:
        rec = json.loads(line)
        frame = int(rec["frame"])
        bbox = tuple(float(v) for v in rec["bbox"])
        score = float(rec["score"])
        height, width = (int(v) for v in rec["size"])
        counts = tuple(int(c) for c in rec["counts"])
        emb = rec.get("embedding")
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedRecord(f"{where}: {exc}") from exc
    if len(bbox) != 4 or not all(math.isfinite(v) for v in bbox):
        raise MalformedRecord(f"{where}: bbox needs four finite values")
    x1, y1, x2, y2 = bbox
    if not (x1 < x2 and y1 < y2):
        raise MalformedRecord(f"{where}: degenerate bbox {bbox}")
    if x2 <= 0 or y2 <= 0 or x1 >= intrinsics.width or y1 >= intrinsics.height:
        raise MalformedRecord(f"{where}: bbox {bbox} does not intersect the image")
    if not 0.0 <= score <= 1.0:
        raise MalformedRecord(f"{where}: score {score} outside [0, 1]")
    if (width, height) != (intrinsics.width, intrinsics.height):
        raise DimensionMismatch(f"{where}: mask is {width}x{height}, image is {intrinsics.width}x{intrinsics.height}")
    if sum(counts) != width * height:
        raise LengthMismatch(f"{where}: RLE counts sum to {sum(counts)}, mask area is {width * height}")
    embedding = None
    if emb is not None:
        embedding = tuple(float(v) for v in emb)
        norm = math.sqrt(sum(v * v for v in embedding))
        if abs(norm - 1.0) > EMBEDDING_NORM_TOL:
            raise MalformedRecord(f"{where}: embedding norm {norm} is not 1")
    return frame, Detection(bbox, score, RLEMask(width, height, counts), embedding)


def mask_outside_box(mask: np.ndarray, bbox: Box) -> int:
    """Number of set pixels lying outside ``bbox`` (clipped to the image)."""
    h, w = mask.shape
    x1 = max(0, int(math.floor(bbox[0])))
    y1 = max(0, int(math.floor(bbox[1])))
    x2 = min(w, int(math.ceil(bbox[2])))
    y2 = min(h, int(math.ceil(bbox[3])))
    inside = int(mask[y1:y2, x1:x2].sum()) if x2 > x1 and y2 > y1 else 0
    return int(mask.sum()) - inside


# --------------------------------------------------------------------------
# sequences


@dataclass
class Sequence:
    """A parsed sequence directory.  Depth maps are read on demand."""

    root: Path
    intrinsics: CameraIntrinsics
    frame_count: int
    detections: dict[int, list[Detection]]
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.frame_count

    def frame(self, index: int) -> FrameRecord:
        if not 1 <= index <= self.frame_count:
            raise IndexError(f"frame {index} outside 1..{self.frame_count}")
        depth = read_depth(depth_path(self.root, index), self.intrinsics.width, self.intrinsics.height)
        dets = self.detections.get(index, [])
        record = FrameRecord(index, depth, dets)
        for k, (det, mask) in enumerate(zip(dets, record.masks)):
            outside = mask_outside_box(mask, det.bbox)
            if outside:
                log.warning("frame %d detection %d: %d mask pixels outside its box", index, k, outside)
        return record

    def frames(self) -> Iterator[FrameRecord]:
        for index in range(1, self.frame_count + 1):
            yield self.frame(index)


def parse_sequence(root) -> Sequence:
    root = Path(root)
    manifest = root / MANIFEST_NAME
    if not manifest.is_file():
        raise MissingFile(str(manifest))
    intrinsics, frame_count, extra = parse_manifest(manifest.read_text())

    det_file = root / DETECTIONS_PATH
    if not det_file.is_file():
        raise MissingFile(str(det_file))
    detections: dict[int, list[Detection]] = {}
    last = 0
    with open(det_file) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            frame, det = parse_detection(line, intrinsics, f"{det_file}:{lineno}")
            if frame < last:
                raise NonMonotonicFrameIndex(f"{det_file}:{lineno}: frame {frame} after frame {last}")
            if not 1 <= frame <= frame_count:
                raise MalformedRecord(f"{det_file}:{lineno}: frame {frame} outside 1..{frame_count}")
            last = frame
            detections.setdefault(frame, []).append(det)

    for index in range(1, frame_count + 1):
        w, h = read_depth_header(depth_path(root, index))
        if (w, h) != (intrinsics.width, intrinsics.height):
            raise DimensionMismatch(
                f"{depth_path(root, index)}: depth is {w}x{h}, manifest says {intrinsics.width}x{intrinsics.height}"
            )
    return Sequence(root, intrinsics, frame_count, detections, extra)


def write_sequence(
    root,
    intrinsics: CameraIntrinsics,
    depths: Iterable[np.ndarray],
    detections: dict[int, list[Detection]],
    extra: Optional[dict] = None,
) -> Path:
    """Serialize a sequence; ``depths`` yields frames 1..N in order."""
    root = Path(root)
    (root / DEPTH_DIR).mkdir(parents=True, exist_ok=True)
    (root / DETECTIONS_PATH).parent.mkdir(parents=True, exist_ok=True)
    n = 0
    for n, depth in enumerate(depths, 1):
        if depth.shape != (intrinsics.height, intrinsics.width):
            raise DimensionMismatch(f"frame {n}: depth shape {depth.shape}")
        write_depth(depth_path(root, n), depth)
    (root / MANIFEST_NAME).write_text(format_manifest(intrinsics, n, extra))
    with open(root / DETECTIONS_PATH, "w") as fh:
        for frame in sorted(detections):
            if not 1 <= frame <= n:
                raise MalformedRecord(f"detections for frame {frame} outside 1..{n}")
            for det in detections[frame]:
                fh.write(format_detection(frame, det) + "\n")
    return root


def copy_sequence(seq: Sequence, root) -> Path:
    """Re-serialize a parsed sequence (used for round-trip checks)."""
    depths = (read_depth(depth_path(seq.root, i)) for i in range(1, seq.frame_count + 1))
    return write_sequence(root, seq.intrinsics, depths, seq.detections, seq.extra)


# --------------------------------------------------------------------------
# MOT results


def format_mot_row(row: TrackOutputRow) -> str:
    return (
        f"{row.frame},{row.id},{row.bb_left:.2f},{row.bb_top:.2f},"
        f"{row.bb_width:.2f},{row.bb_height:.2f},{row.conf:.2f},-1,-1,-1"
    )


def write_mot_results(rows: Seq[TrackOutputRow], path) -> None:
    keys = [(r.frame, r.id) for r in rows]
    if keys != sorted(keys):
        raise ValueError("rows must be sorted by (frame, id)")
    with open(path, "w") as fh:
        for row in rows:
            fh.write(format_mot_row(row) + "\n")


def read_mot_results(path) -> list[TrackOutputRow]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) < 7:
            raise MalformedRecord(f"{path}:{lineno}: expected at least 7 columns")
        try:
            rows.append(
                TrackOutputRow(
                    int(float(parts[0])),
                    int(float(parts[1])),
                    float(parts[2]),
                    float(parts[3]),
                    float(parts[4]),
                    float(parts[5]),
                    float(parts[6]),
                )
            )
        except ValueError as exc:
            raise MalformedRecord(f"{path}:{lineno}: {exc}") from exc
    return rows
