"""``depthtrack`` command line: simulate, track, evaluate, report.

Exit codes: 0 success, 1 usage or configuration error, 2 bad input data.
The worker thread count defaults to 1 and can be set with ``--threads`` or
the ``DEPTHTRACK_THREADS`` environment variable.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from dataclasses import fields
from pathlib import Path
from typing import Optional

from .config import TrackerConfig, coerce, parse_overrides
from .errors import ConfigError, DepthTrackError
from .ingest import GT_NAME, parse_sequence, write_mot_results
from .metrics import evaluate, evaluate_files, frames_from_rows, read_ground_truth
from .simulator import PRESETS, generate_scene, preset
from .tracker import run_sequence

THREADS_ENV = "DEPTHTRACK_THREADS"

log = logging.getLogger("depthtrack")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_argument_group("tracker settings (override --config)")
    for f in fields(TrackerConfig):
        group.add_argument(_flag(f.name), dest=f"cfg_{f.name}", metavar="VALUE", default=None,
                           help=f"default {getattr(TrackerConfig(), f.name)!r}")
    group.add_argument("--no-danc", action="store_true", help="disable occlusion-scaled process noise (alpha = 0)")
    group.add_argument("--no-docm", action="store_true", help="disable the 3D motion-direction term (w_docm = 0)")
    p.add_argument("--config", type=Path, help="key = value file of tracker settings")


def config_from_args(args) -> TrackerConfig:
    """Defaults, then the config file, then explicit flags."""
    values = {}
    if getattr(args, "config", None) is not None:
        if not args.config.is_file():
            raise ConfigError(f"config file not found: {args.config}")
        values.update(parse_overrides(args.config.read_text()))
    for f in fields(TrackerConfig):
        raw = getattr(args, f"cfg_{f.name}", None)
        if raw is not None:
            values[f.name] = coerce(f.name, raw)
    if getattr(args, "no_danc", False):
        values["alpha"] = 0.0
    if getattr(args, "no_docm", False):
        values["w_docm"] = 0.0
    return TrackerConfig(**values)


def _threads(args) -> int:
    raw = args.threads if args.threads is not None else os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"thread count must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("thread count must be >= 1")
    return n


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    spec = preset(args.preset, args.seed, args.frames)
    seq, gt = generate_scene(spec, args.out)
    print(f"wrote {seq.frame_count} frames to {args.out}")
    return 0


def cmd_track(args) -> int:
    cfg = config_from_args(args)
    seq = parse_sequence(args.sequence)
    rows, stats = run_sequence(seq, cfg, _threads(args))
    write_mot_results(rows, args.out)
    if args.stats is not None:
        Path(args.stats).write_text(stats.to_text(cfg))
    log.info("tracked %d frames, %d rows, %.2f fps", stats.frames, stats.rows, stats.fps)
    return 0


def _n_frames_near(gt_path: Path) -> Optional[int]:
    try:
        return parse_sequence(gt_path.parent).frame_count
    except DepthTrackError:
        return None


def cmd_evaluate(args) -> int:
    gt_path = Path(args.gt)
    if gt_path.is_dir():
        gt_path = gt_path / GT_NAME
    report = evaluate_files(gt_path, args.pred, args.iou_threshold, args.min_visibility, _n_frames_near(gt_path))
    text = report.to_text()
    sys.stdout.write(text)
    if args.out is not None:
        Path(args.out).write_text(text)
    if args.curve is not None:
        Path(args.curve).write_text(report.curve_csv())
    return 0


VARIANTS = (
    ("default", {}),
    ("box2d_baseline", {"iou_mode": "box2d", "alpha": 0.0, "w_docm": 0.0}),
    ("no_danc", {"alpha": 0.0}),
    ("no_docm", {"w_docm": 0.0}),
    ("box2d_iou", {"iou_mode": "box2d"}),
    ("bbox_projection", {"projection_mode": "bbox"}),
)

REPORT_COLUMNS = ("variant", "hota", "mota", "idf1", "deta", "assa", "id_switches", "fp", "fn", "tracks_created")


def run_report(seq_dir: Path, base: TrackerConfig, workers: int = 1, min_visibility: float = 0.0) -> str:
    seq = parse_sequence(seq_dir)
    gt = read_ground_truth(seq_dir / GT_NAME, min_visibility)
    lines = [",".join(REPORT_COLUMNS)]
    for name, changes in VARIANTS:
        cfg = base.replace(**changes)
        rows, stats = run_sequence(seq, cfg, workers)
        r = evaluate(gt, frames_from_rows(rows), n_frames=seq.frame_count)
        lines.append(
            f"{name},{r.hota:.6f},{r.mota:.6f},{r.idf1:.6f},{r.deta:.6f},{r.assa:.6f},"
            f"{r.id_switches},{r.fp},{r.fn},{stats.tracks_created}"
        )
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    base = config_from_args(args)
    workers = _threads(args)
    if args.sequence is not None:
        csv = run_report(Path(args.sequence), base, workers, args.min_visibility)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            generate_scene(preset(args.preset, args.seed, args.frames), tmp)
            csv = run_report(Path(tmp), base, workers, args.min_visibility)
    if args.out is None:
        sys.stdout.write(csv)
    else:
        Path(args.out).write_text(csv)
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="depthtrack", description="Depth-aware multi-object tracking on synthetic or recorded sequences.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="render a synthetic sequence with ground truth")
    s.add_argument("--preset", choices=sorted(PRESETS), default="crossing")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--frames", type=int, default=None, help="override the preset's length")
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("track", help="run the tracker over a sequence directory")
    t.add_argument("sequence", type=Path)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--stats", type=Path, help="write run statistics and the effective config here")
    t.add_argument("--threads", default=None)
    _add_config_flags(t)
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("evaluate", help="score predictions against ground truth")
    e.add_argument("gt", help="gt.txt or a sequence directory containing one")
    e.add_argument("pred")
    e.add_argument("--iou-threshold", type=float, default=0.5)
    e.add_argument("--min-visibility", type=float, default=0.0)
    e.add_argument("--out", type=Path)
    e.add_argument("--curve", type=Path, help="write the per-alpha HOTA curve as CSV")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="compare tracker variants on one sequence")
    r.add_argument("sequence", nargs="?", type=Path, help="sequence with gt.txt; simulated when omitted")
    r.add_argument("--preset", choices=sorted(PRESETS), default="crossing")
    r.add_argument("--seed", type=int, default=42)
    r.add_argument("--frames", type=int, default=None)
    r.add_argument("--min-visibility", type=float, default=0.0)
    r.add_argument("--out", type=Path)
    r.add_argument("--threads", default=None)
    _add_config_flags(r)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    level = logging.ERROR if args.quiet else (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DepthTrackError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
