"""Keyframe-wise global map: lift depth pixels to world points, cull
superseded points by reprojection, append the new local cloud.

The culling rule is deliberately simple substitution: any retained point
that projects in front of the new keyframe's camera onto a pixel with valid
depth is replaced by the new observation of that region, regardless of depth
agreement. A depth-gated variant (cull only when the re-observed depth
matches within a tolerance) is available for occlusion-heavy scenes and off
by default.

Updates return a new GlobalMap and never mutate their inputs, so a map
reference held by a reader stays a consistent snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .fileio import write_ply
from .geometry import DepthField, Pose, StereoRig, backproject_pixels, project_points
from .matcher import DisparityField

DEFAULT_SUBSAMPLE_STRIDE = 2
DEFAULT_DEPTH_GATE_MM = 2.0


@dataclass(frozen=True)
class MapPoint:
    """One world point: position (mm), RGB color, originating keyframe."""

    position: tuple[float, float, float]
    color: tuple[int, int, int]
    source_keyframe: int

    def __post_init__(self) -> None:
        if not all(np.isfinite(v) for v in self.position):
            raise ValueError(f"position must be finite, got {self.position}")


class MapPoints:
    """A sequence of MapPoint stored as flat arrays.

    Behaves like a read-only list of MapPoint (len, indexing, iteration)
    while keeping positions/colors/source_keyframes contiguous for the
    vectorized mosaic and export paths.
    """

    __slots__ = ("positions", "colors", "source_keyframes")

    def __init__(
        self,
        positions: np.ndarray,
        colors: np.ndarray,
        source_keyframes: np.ndarray,
    ) -> None:
        self.positions = np.ascontiguousarray(positions, dtype=np.float32).reshape(
            -1, 3
        )
        self.colors = np.ascontiguousarray(colors, dtype=np.uint8).reshape(-1, 3)
        self.source_keyframes = np.ascontiguousarray(
            source_keyframes, dtype=np.int32
        ).reshape(-1)
        if not (
            len(self.positions) == len(self.colors) == len(self.source_keyframes)
        ):
            raise ValueError("positions/colors/source_keyframes lengths differ")
        if len(self.positions) and not np.all(np.isfinite(self.positions)):
            raise ValueError("point positions must be finite")

    @classmethod
    def empty(cls) -> "MapPoints":
        return cls(
            np.empty((0, 3), dtype=np.float32),
            np.empty((0, 3), dtype=np.uint8),
            np.empty(0, dtype=np.int32),
        )

    @classmethod
    def from_points(cls, points: Iterable[MapPoint]) -> "MapPoints":
        items = list(points)
        if not items:
            return cls.empty()
        return cls(
            np.asarray([p.position for p in items], dtype=np.float32),
            np.asarray([p.color for p in items], dtype=np.uint8),
            np.asarray([p.source_keyframe for p in items], dtype=np.int32),
        )

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, index: int) -> MapPoint:
        return MapPoint(
            position=tuple(float(v) for v in self.positions[index]),
            color=tuple(int(v) for v in self.colors[index]),
            source_keyframe=int(self.source_keyframes[index]),
        )

    def __iter__(self) -> Iterator[MapPoint]:
        for i in range(len(self)):
            yield self[i]


def _as_map_points(points: MapPoints | Iterable[MapPoint]) -> MapPoints:
    if isinstance(points, MapPoints):
        return points
    return MapPoints.from_points(points)


@dataclass(frozen=True)
class GlobalMap:
    """The fused map: retained points plus the processing history."""

    points: MapPoints = field(default_factory=MapPoints.empty)
    keyframe_log: tuple[int, ...] = ()
    culled_counts: tuple[int, ...] = ()

    @classmethod
    def empty(cls) -> "GlobalMap":
        return cls()

    def __len__(self) -> int:
        return len(self.points)

    @property
    def positions(self) -> np.ndarray:
        return self.points.positions

    @property
    def colors(self) -> np.ndarray:
        return self.points.colors


@dataclass(frozen=True)
class KeyframeRecord:
    """Everything the mosaic needs from one processed keyframe."""

    index: int
    pose: Pose
    depth: DepthField
    color: np.ndarray
    disparity: DisparityField

    def __post_init__(self) -> None:
        color = np.asarray(self.color)
        if color.ndim != 3 or color.shape[2] != 3:
            raise ValueError(
                f"color must be (H, W, 3), got shape {color.shape}"
            )
        if color.shape[:2] != self.depth.depth.shape:
            raise ValueError(
                f"color shape {color.shape[:2]} does not match depth "
                f"{self.depth.depth.shape}"
            )
        object.__setattr__(
            self, "color", np.ascontiguousarray(color, dtype=np.uint8)
        )


def lift_keyframe(
    kf: KeyframeRecord,
    rig: StereoRig,
    subsample_stride: int = DEFAULT_SUBSAMPLE_STRIDE,
) -> MapPoints:
    """World points for every valid depth pixel on the stride grid.

    Points take the left image's color at their pixel and the keyframe's
    index as provenance. Returns an empty collection when nothing is valid.
    """
    if subsample_stride < 1:
        raise ValueError(f"subsample_stride must be >= 1, got {subsample_stride}")
    h, w = kf.depth.depth.shape
    vs = np.arange(0, h, subsample_stride)
    us = np.arange(0, w, subsample_stride)
    vv, uu = np.meshgrid(vs, us, indexing="ij")
    keep = kf.depth.valid_mask[vv, uu]
    if not keep.any():
        return MapPoints.empty()
    u = uu[keep]
    v = vv[keep]
    pixels = np.stack([u, v], axis=1).astype(np.float64)
    depths = kf.depth.depth[v, u].astype(np.float64)
    positions = backproject_pixels(rig, kf.pose, pixels, depths)
    colors = kf.color[v, u]
    sources = np.full(len(u), kf.index, dtype=np.int32)
    return MapPoints(positions.astype(np.float32), colors, sources)


def cull_mask(
    existing: MapPoints,
    kf: KeyframeRecord,
    rig: StereoRig,
    depth_gated: bool = False,
    depth_gate_mm: float = DEFAULT_DEPTH_GATE_MM,
) -> np.ndarray:
    """Boolean mask of existing points superseded by keyframe kf.

    A point is superseded when it projects in front of the camera, its
    rounded pixel lies in bounds, and that pixel has valid depth. Points
    behind the camera are never culled. With depth_gated, the point must
    additionally agree with the newly observed depth within depth_gate_mm.
    """
    n = len(existing)
    cull = np.zeros(n, dtype=bool)
    if n == 0:
        return cull
    pixels, depth_cam = project_points(
        rig, kf.pose, existing.positions.astype(np.float64)
    )
    candidates = (depth_cam > 0) & np.isfinite(pixels).all(axis=1)
    idx = np.nonzero(candidates)[0]
    if idx.size == 0:
        return cull
    px = np.rint(pixels[idx, 0]).astype(np.int64)
    py = np.rint(pixels[idx, 1]).astype(np.int64)
    h, w = kf.depth.depth.shape
    in_bounds = (px >= 0) & (px < w) & (py >= 0) & (py < h)
    idx = idx[in_bounds]
    px = px[in_bounds]
    py = py[in_bounds]
    hit = kf.depth.valid_mask[py, px]
    if depth_gated:
        observed = kf.depth.depth[py, px].astype(np.float64)
        hit = hit & (np.abs(depth_cam[idx] - observed) <= depth_gate_mm)
    cull[idx[hit]] = True
    return cull


def mosaic_update(
    global_map: GlobalMap,
    kf: KeyframeRecord,
    new_points: MapPoints | Iterable[MapPoint],
    rig: StereoRig,
    depth_gated: bool = False,
    depth_gate_mm: float = DEFAULT_DEPTH_GATE_MM,
) -> GlobalMap:
    """Fold one keyframe into the map; returns the updated snapshot.

    The first keyframe initializes the map with its cloud. Afterwards,
    retained points that reproject onto valid-depth pixels of kf are culled
    (see cull_mask) and new_points are appended unchanged. Keyframe indices
    must be strictly increasing; reusing one raises ValueError.
    """
    if kf.index in global_map.keyframe_log:
        raise ValueError(f"keyframe index {kf.index} already processed")
    if global_map.keyframe_log and kf.index <= global_map.keyframe_log[-1]:
        raise ValueError(
            f"keyframe indices must increase: got {kf.index} after "
            f"{global_map.keyframe_log[-1]}"
        )
    new_points = _as_map_points(new_points)
    log = global_map.keyframe_log + (kf.index,)
    if not global_map.keyframe_log:
        return GlobalMap(
            points=new_points, keyframe_log=log,
            culled_counts=global_map.culled_counts + (0,),
        )
    cull = cull_mask(
        global_map.points, kf, rig,
        depth_gated=depth_gated, depth_gate_mm=depth_gate_mm,
    )
    keep = ~cull
    merged = MapPoints(
        np.concatenate([global_map.points.positions[keep], new_points.positions]),
        np.concatenate([global_map.points.colors[keep], new_points.colors]),
        np.concatenate(
            [global_map.points.source_keyframes[keep], new_points.source_keyframes]
        ),
    )
    return GlobalMap(
        points=merged,
        keyframe_log=log,
        culled_counts=global_map.culled_counts + (int(cull.sum()),),
    )


def export_ply(global_map: GlobalMap, path: str | Path) -> None:
    """Write the map as binary PLY (positions mm, RGB)."""
    write_ply(path, global_map.positions, global_map.colors)
