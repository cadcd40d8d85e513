"""Session driver: stream frames, pick keyframes, map them asynchronously.

The driver thread loads images, applies the keyframe policy, and enqueues
mapping jobs on a bounded FIFO queue. A single mapping worker owns the
global map and runs match -> triangulate+lift -> mosaic per job, so map
content depends only on job order, never on scheduling. By default the
queue applies back-pressure (lossless); drop_when_busy trades completeness
for ingest rate by discarding keyframes while the queue is full.
"""

from __future__ import annotations

import glob
import logging
import queue as queue_mod
import statistics
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fileio import load_color, load_grayscale
from .geometry import (
    DEFAULT_MIN_DISPARITY,
    Pose,
    StereoRig,
    depth_field_from_disparity,
    geodesic_rotation_deg,
    load_tum_trajectory,
)
from .matcher import MatcherConfig, RectifiedStereoPair, match
from .mosaic import (
    DEFAULT_DEPTH_GATE_MM,
    DEFAULT_SUBSAMPLE_STRIDE,
    GlobalMap,
    KeyframeRecord,
    export_ply,
    lift_keyframe,
    mosaic_update,
)

logger = logging.getLogger(__name__)

MAP_FILENAME = "map.ply"
TIMING_CSV_FILENAME = "timing.csv"
_TIMESTAMP_TOLERANCE_S = 0.010
_CSV_HEADER = "kf_index,match_ms,lift_ms,mosaic_ms,export_ms"


class DataError(Exception):
    """Invalid or inconsistent input data (bad files, misaligned inputs)."""


@dataclass(frozen=True)
class KeyframePolicy:
    """When to promote a frame to a keyframe."""

    translation_threshold_mm: float = 3.0
    rotation_threshold_deg: float = 5.0
    max_frame_gap: int = 30

    def __post_init__(self) -> None:
        if self.translation_threshold_mm <= 0:
            raise ValueError(
                "translation_threshold_mm must be positive, got "
                f"{self.translation_threshold_mm}"
            )
        if self.rotation_threshold_deg <= 0:
            raise ValueError(
                "rotation_threshold_deg must be positive, got "
                f"{self.rotation_threshold_deg}"
            )
        if self.max_frame_gap < 1:
            raise ValueError(
                f"max_frame_gap must be >= 1, got {self.max_frame_gap}"
            )


def select_keyframe(
    prev_kf_pose: Pose,
    current_pose: Pose,
    frames_since_kf: int,
    policy: KeyframePolicy,
) -> bool:
    """True when motion or elapsed frames warrant a new keyframe."""
    translation = float(
        np.linalg.norm(current_pose.translation - prev_kf_pose.translation)
    )
    if translation > policy.translation_threshold_mm:
        return True
    rotation = geodesic_rotation_deg(prev_kf_pose, current_pose)
    if rotation > policy.rotation_threshold_deg:
        return True
    return frames_since_kf >= policy.max_frame_gap


@dataclass
class KeyframeTiming:
    """Stage costs (milliseconds) for one processed keyframe."""

    kf_index: int
    match_ms: float
    lift_ms: float
    mosaic_ms: float
    export_ms: float = 0.0


@dataclass
class TimingReport:
    """Per-keyframe stage costs plus whole-session throughput."""

    rows: list[KeyframeTiming] = field(default_factory=list)
    frames_processed: int = 0
    keyframes_processed: int = 0
    dropped_keyframes: int = 0
    elapsed_s: float = 0.0

    @property
    def hz(self) -> float:
        if self.elapsed_s <= 0.0:
            return 0.0
        return self.frames_processed / self.elapsed_s

    def stage_means(self) -> dict[str, float]:
        return self._stage_stat(statistics.fmean)

    def stage_medians(self) -> dict[str, float]:
        return self._stage_stat(statistics.median)

    def _stage_stat(self, fn) -> dict[str, float]:
        stages = ("match_ms", "lift_ms", "mosaic_ms", "export_ms")
        if not self.rows:
            return {stage: 0.0 for stage in stages}
        return {
            stage: float(fn([getattr(row, stage) for row in self.rows]))
            for stage in stages
        }


def report_timing(report: TimingReport, csv_path: str | Path) -> None:
    """Write the per-keyframe CSV (with a trailing mean row) and a text
    summary alongside it (same stem, .txt)."""
    csv_path = Path(csv_path)
    means = report.stage_means()
    medians = report.stage_medians()
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(_CSV_HEADER + "\n")
        for row in report.rows:
            fh.write(
                f"{row.kf_index},{row.match_ms!r},{row.lift_ms!r},"
                f"{row.mosaic_ms!r},{row.export_ms!r}\n"
            )
        fh.write(
            "mean,{match_ms!r},{lift_ms!r},{mosaic_ms!r},{export_ms!r}\n".format(
                **means
            )
        )
    text_path = csv_path.with_suffix(".txt")
    lines = [
        f"frames processed:    {report.frames_processed}",
        f"keyframes processed: {report.keyframes_processed}",
        f"keyframes dropped:   {report.dropped_keyframes}",
        f"elapsed seconds:     {report.elapsed_s:.3f}",
        f"end-to-end Hz:       {report.hz:.3f}",
        "",
        "stage            mean ms     median ms",
    ]
    for stage in ("match_ms", "lift_ms", "mosaic_ms", "export_ms"):
        lines.append(
            f"{stage:<12} {means[stage]:>12.3f} {medians[stage]:>12.3f}"
        )
    lines.append("")
    lines.append("export_ms covers the final map write, attributed to the "
                 "last keyframe row.")
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class SessionConfig:
    """Inputs and knobs for one mapping session."""

    rig: StereoRig
    left_glob: str
    right_glob: str
    trajectory_path: str
    output_dir: str
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    policy: KeyframePolicy = field(default_factory=KeyframePolicy)
    queue_capacity: int = 2
    subsample_stride: int = DEFAULT_SUBSAMPLE_STRIDE
    min_disparity: float = DEFAULT_MIN_DISPARITY
    drop_when_busy: bool = False
    depth_gated_culling: bool = False
    depth_gate_mm: float = DEFAULT_DEPTH_GATE_MM

    def __post_init__(self) -> None:
        if self.queue_capacity < 1:
            raise ValueError(
                f"queue_capacity must be >= 1, got {self.queue_capacity}"
            )
        if self.subsample_stride < 1:
            raise ValueError(
                f"subsample_stride must be >= 1, got {self.subsample_stride}"
            )


@dataclass(frozen=True)
class _Frame:
    index: int
    left_path: str
    right_path: str
    pose: Pose


@dataclass(frozen=True)
class _Job:
    frame_index: int
    pair: RectifiedStereoPair
    pose: Pose


def _stem_timestamp(path: str) -> float | None:
    stem = Path(path).stem
    for candidate in (stem, stem.split("_")[-1]):
        try:
            return float(candidate)
        except ValueError:
            continue
    return None


def _associate_frames(cfg: SessionConfig) -> list[_Frame]:
    """Pair left/right images with trajectory poses, by index when counts
    match, otherwise by filename-derived timestamps within 10 ms."""
    left_paths = sorted(glob.glob(cfg.left_glob))
    right_paths = sorted(glob.glob(cfg.right_glob))
    if not left_paths:
        raise DataError(f"left glob matched no files: {cfg.left_glob!r}")
    if len(left_paths) != len(right_paths):
        raise DataError(
            f"left/right image counts differ: {len(left_paths)} vs "
            f"{len(right_paths)}"
        )
    try:
        trajectory = load_tum_trajectory(cfg.trajectory_path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load trajectory: {exc}") from exc
    if not trajectory:
        raise DataError(f"trajectory {cfg.trajectory_path!r} is empty")

    if len(trajectory) == len(left_paths):
        return [
            _Frame(index=i, left_path=lp, right_path=rp, pose=pose)
            for i, (lp, rp, (_, pose)) in enumerate(
                zip(left_paths, right_paths, trajectory)
            )
        ]

    stamps = [_stem_timestamp(p) for p in left_paths]
    if any(s is None for s in stamps):
        raise DataError(
            f"trajectory has {len(trajectory)} poses for {len(left_paths)} "
            "images and filenames carry no timestamps to associate by"
        )
    traj_times = np.asarray([t for t, _ in trajectory])
    frames = []
    used: set[int] = set()
    for i, (lp, rp, stamp) in enumerate(zip(left_paths, right_paths, stamps)):
        nearest = int(np.argmin(np.abs(traj_times - stamp)))
        if abs(traj_times[nearest] - stamp) > _TIMESTAMP_TOLERANCE_S:
            raise DataError(
                f"no trajectory pose within 10 ms of image {lp!r} "
                f"(timestamp {stamp})"
            )
        if nearest in used:
            raise DataError(
                f"ambiguous trajectory association: pose "
                f"{traj_times[nearest]} matches multiple images"
            )
        used.add(nearest)
        frames.append(
            _Frame(index=i, left_path=lp, right_path=rp, pose=trajectory[nearest][1])
        )
    return frames


def _load_pair(cfg: SessionConfig, frame: _Frame) -> RectifiedStereoPair:
    try:
        left = load_grayscale(frame.left_path)
        right = load_grayscale(frame.right_path)
        color = load_color(frame.left_path)
    except OSError as exc:
        raise DataError(f"cannot read frame {frame.index}: {exc}") from exc
    expected = (cfg.rig.image_height, cfg.rig.image_width)
    if left.shape != expected:
        raise DataError(
            f"frame {frame.index}: image size {left.shape[::-1]} does not "
            f"match rig {expected[::-1]}"
        )
    try:
        return RectifiedStereoPair(left=left, right=right, left_color=color)
    except ValueError as exc:
        raise DataError(f"frame {frame.index}: {exc}") from exc


class _MappingWorker:
    """Owns the global map; consumes jobs until the None sentinel."""

    def __init__(self, cfg: SessionConfig) -> None:
        self.cfg = cfg
        self.global_map = GlobalMap.empty()
        self.rows: list[KeyframeTiming] = []
        self.error: BaseException | None = None
        self.queue: queue_mod.Queue = queue_mod.Queue(maxsize=cfg.queue_capacity)
        self.thread = threading.Thread(target=self._run, name="mapping-worker")

    def _run(self) -> None:
        while True:
            job = self.queue.get()
            if job is None:
                return
            if self.error is not None:
                continue
            try:
                self._process(job)
            except BaseException as exc:
                self.error = exc

    def _process(self, job: _Job) -> None:
        cfg = self.cfg
        t0 = time.perf_counter()
        disparity = match(job.pair, cfg.matcher)
        t1 = time.perf_counter()
        if not disparity.valid_mask.any():
            logger.warning(
                "keyframe %d: no valid disparities, skipping", job.frame_index
            )
            return
        depth = depth_field_from_disparity(
            cfg.rig, disparity.disparity, disparity.valid_mask,
            min_disparity=cfg.min_disparity,
        )
        record = KeyframeRecord(
            index=job.frame_index,
            pose=job.pose,
            depth=depth,
            color=job.pair.left_color,
            disparity=disparity,
        )
        new_points = lift_keyframe(record, cfg.rig, cfg.subsample_stride)
        t2 = time.perf_counter()
        self.global_map = mosaic_update(
            self.global_map, record, new_points, cfg.rig,
            depth_gated=cfg.depth_gated_culling,
            depth_gate_mm=cfg.depth_gate_mm,
        )
        t3 = time.perf_counter()
        self.rows.append(
            KeyframeTiming(
                kf_index=job.frame_index,
                match_ms=(t1 - t0) * 1e3,
                lift_ms=(t2 - t1) * 1e3,
                mosaic_ms=(t3 - t2) * 1e3,
            )
        )


def run_session(cfg: SessionConfig) -> tuple[GlobalMap, TimingReport]:
    """Run the full mapping session; returns the map and the timing report.

    Writes map.ply, timing.csv and timing.txt into cfg.output_dir. Frames
    whose left color image is needed for point colors are loaded once in the
    driver; the mapping worker does all matching and map maintenance.
    """
    frames = _associate_frames(cfg)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    worker = _MappingWorker(cfg)
    worker.thread.start()
    start = time.perf_counter()
    prev_kf_pose: Pose | None = None
    frames_since_kf = 0
    dropped = 0
    try:
        for frame in frames:
            pair = _load_pair(cfg, frame)
            is_keyframe = prev_kf_pose is None or select_keyframe(
                prev_kf_pose, frame.pose, frames_since_kf, cfg.policy
            )
            if is_keyframe:
                prev_kf_pose = frame.pose
                frames_since_kf = 0
                job = _Job(frame_index=frame.index, pair=pair, pose=frame.pose)
                if cfg.drop_when_busy:
                    try:
                        worker.queue.put_nowait(job)
                    except queue_mod.Full:
                        dropped += 1
                        logger.warning(
                            "queue full, dropping keyframe %d", frame.index
                        )
                else:
                    worker.queue.put(job)
            frames_since_kf += 1
    finally:
        worker.queue.put(None)
        worker.thread.join()
    if worker.error is not None:
        raise worker.error

    export_start = time.perf_counter()
    export_ply(worker.global_map, out_dir / MAP_FILENAME)
    export_ms = (time.perf_counter() - export_start) * 1e3
    if worker.rows:
        worker.rows[-1].export_ms = export_ms
    elapsed = time.perf_counter() - start

    report = TimingReport(
        rows=worker.rows,
        frames_processed=len(frames),
        keyframes_processed=len(worker.rows),
        dropped_keyframes=dropped,
        elapsed_s=elapsed,
    )
    report_timing(report, out_dir / TIMING_CSV_FILENAME)
    return worker.global_map, report
