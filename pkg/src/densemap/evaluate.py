"""Accuracy metrics: disparity endpoint error and map-to-reference distance.

Map error follows an admit-then-average scheme: each map point contributes
its distance to the nearest reference geometry; distances at or above the
cutoff are counted as outliers and excluded, the rest form the error set
whose mean and median are reported.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.spatial import cKDTree

from .fileio import read_config, read_ply
from .matcher import DisparityField
from .mosaic import GlobalMap
from .surfaces import Cylinder, Plane, Sphere, Surface, tube_surface

DEFAULT_CUTOFF_MM = 5.0
_KDTREE_MIN_REFERENCE = 512


@dataclass(frozen=True)
class EpeSummary:
    """Disparity endpoint-error statistics over mutually valid pixels."""

    mean_px: float
    median_px: float
    fraction_within_half_px: float
    pixel_count: int


@dataclass(frozen=True)
class EvaluationReport:
    """Map accuracy: inlier error set (mm) plus its summary statistics."""

    error_set: np.ndarray
    mean_mm: float
    median_mm: float
    inlier_count: int
    outlier_count: int
    invalid_count: int
    cutoff_mm: float = DEFAULT_CUTOFF_MM

    def to_dict(self) -> dict:
        """JSON-ready view; non-finite statistics become null."""

        def _num(value: float) -> float | None:
            return None if not math.isfinite(value) else float(value)

        return {
            "error_set": [round(float(e), 6) for e in self.error_set],
            "mean_mm": _num(self.mean_mm),
            "median_mm": _num(self.median_mm),
            "inlier_count": self.inlier_count,
            "outlier_count": self.outlier_count,
            "invalid_count": self.invalid_count,
            "cutoff_mm": float(self.cutoff_mm),
        }


def disparity_epe(estimate: DisparityField, truth: DisparityField) -> EpeSummary:
    """Endpoint-error statistics over pixels valid in both fields."""
    if estimate.disparity.shape != truth.disparity.shape:
        raise ValueError(
            f"field dimensions differ: {estimate.disparity.shape} vs "
            f"{truth.disparity.shape}"
        )
    both = estimate.valid_mask & truth.valid_mask
    count = int(both.sum())
    if count == 0:
        return EpeSummary(
            mean_px=float("nan"),
            median_px=float("nan"),
            fraction_within_half_px=float("nan"),
            pixel_count=0,
        )
    errors = np.abs(
        estimate.disparity[both].astype(np.float64)
        - truth.disparity[both].astype(np.float64)
    )
    return EpeSummary(
        mean_px=float(errors.mean()),
        median_px=float(np.median(errors)),
        fraction_within_half_px=float((errors <= 0.5).mean()),
        pixel_count=count,
    )


def nearest_cloud_distances(
    points: np.ndarray, reference: np.ndarray, method: str = "auto"
) -> np.ndarray:
    """Exact nearest-neighbor distance from each point to a reference cloud.

    method "brute" scans all pairs in float64; "kdtree" uses a spatial
    index; "auto" picks the index for references past a size threshold.
    Both paths return identical distances up to floating-point noise.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    reference = np.asarray(reference, dtype=np.float64).reshape(-1, 3)
    if reference.shape[0] == 0:
        raise ValueError("reference cloud is empty")
    if method not in ("auto", "brute", "kdtree"):
        raise ValueError(f"unknown nearest-neighbor method {method!r}")
    if method == "auto":
        method = (
            "kdtree" if reference.shape[0] >= _KDTREE_MIN_REFERENCE else "brute"
        )
    if method == "kdtree":
        distances, _ = cKDTree(reference).query(points, k=1)
        return np.asarray(distances, dtype=np.float64).reshape(-1)
    out = np.empty(points.shape[0], dtype=np.float64)
    chunk = max(1, int(4e6) // max(1, reference.shape[0]))
    for start in range(0, points.shape[0], chunk):
        block = points[start : start + chunk]
        d2 = (
            np.sum(block**2, axis=1)[:, None]
            - 2.0 * block @ reference.T
            + np.sum(reference**2, axis=1)[None, :]
        )
        out[start : start + chunk] = np.sqrt(np.maximum(d2.min(axis=1), 0.0))
    return out


def nearest_reference_distance(
    point: np.ndarray, reference: Surface | np.ndarray
) -> float:
    """Distance (mm) from one point to the reference surface or cloud."""
    point = np.asarray(point, dtype=np.float64).reshape(1, 3)
    if isinstance(reference, Surface):
        return float(reference.distance(point)[0])
    return float(nearest_cloud_distances(point, reference)[0])


def map_to_surface_error(
    global_map: GlobalMap | np.ndarray,
    reference: Surface | np.ndarray,
    cutoff_mm: float = DEFAULT_CUTOFF_MM,
    method: str = "auto",
) -> EvaluationReport:
    """Evaluate every map point against the reference geometry.

    Distances at or above cutoff_mm are outliers and excluded from the error
    set; non-finite distances count as invalid. Mean and median cover the
    error set only and are NaN when it is empty.
    """
    if cutoff_mm <= 0:
        raise ValueError(f"cutoff_mm must be positive, got {cutoff_mm}")
    positions = (
        global_map.positions
        if isinstance(global_map, GlobalMap)
        else np.asarray(global_map)
    )
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if positions.shape[0] == 0:
        raise ValueError("map is empty; nothing to evaluate")
    if isinstance(reference, Surface):
        distances = reference.distance(positions)
    else:
        distances = nearest_cloud_distances(positions, reference, method=method)

    finite = np.isfinite(distances)
    inlier = finite & (distances < cutoff_mm)
    outlier = finite & ~inlier
    error_set = distances[inlier]
    return EvaluationReport(
        error_set=error_set,
        mean_mm=float(error_set.mean()) if error_set.size else float("nan"),
        median_mm=float(np.median(error_set)) if error_set.size else float("nan"),
        inlier_count=int(inlier.sum()),
        outlier_count=int(outlier.sum()),
        invalid_count=int((~finite).sum()),
        cutoff_mm=float(cutoff_mm),
    )


def parse_reference_spec(mapping: Mapping[str, str]) -> Surface:
    """Build an analytic reference surface from flat key=value fields.

    Geometries: plane (point, normal), sphere (center, radius), cylinder
    (axis_point, axis_direction, radius), tube (radius, cap_depth).
    """
    try:
        geometry = mapping["geometry"]
    except KeyError:
        raise ValueError("reference spec is missing the 'geometry' key") from None

    def vec(key: str) -> tuple[float, ...]:
        return tuple(float(tok) for tok in mapping[key].split(","))

    try:
        if geometry == "plane":
            return Plane(point=vec("point"), normal=vec("normal"))
        if geometry == "sphere":
            return Sphere(center=vec("center"), radius=float(mapping["radius"]))
        if geometry == "cylinder":
            return Cylinder(
                axis_point=vec("axis_point"),
                axis_direction=vec("axis_direction"),
                radius=float(mapping["radius"]),
            )
        if geometry == "tube":
            return tube_surface(
                float(mapping["radius"]), float(mapping["cap_depth"])
            )
    except KeyError as exc:
        raise ValueError(
            f"reference spec for {geometry!r} is missing key {exc}"
        ) from None
    raise ValueError(f"unknown reference geometry {geometry!r}")


def load_reference(path: str | Path) -> Surface | np.ndarray:
    """Load an evaluation reference: a .ply cloud or an analytic spec file."""
    path = Path(path)
    if path.suffix.lower() == ".ply":
        positions, _ = read_ply(path)
        return positions
    return parse_reference_spec(read_config(path))


def write_report_json(report: EvaluationReport, path: str | Path) -> None:
    """Write the evaluation report as JSON."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
