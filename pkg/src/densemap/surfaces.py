"""Analytic surfaces: ray intersection for rendering, exact point distances.

All quantities are world-frame millimeters. Rays are given as origins plus
direction vectors (not necessarily unit length); intersections return the
parameter t along the direction, NaN on a miss, so a camera ray with unit
z-component yields camera depth directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _as_points(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got shape {pts.shape}")
    return pts


def _unit(vector: np.ndarray, name: str) -> np.ndarray:
    vec = np.asarray(vector, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise ValueError(f"{name} must be nonzero")
    return vec / norm


class Surface:
    """Base interface: unsigned distance and first positive ray hit."""

    def distance(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Plane(Surface):
    """Infinite plane through ``point`` with unit ``normal``."""

    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "point", np.asarray(self.point, dtype=np.float64).reshape(3)
        )
        object.__setattr__(self, "normal", _unit(self.normal, "normal"))

    def distance(self, points: np.ndarray) -> np.ndarray:
        pts = _as_points(points)
        return np.abs((pts - self.point) @ self.normal)

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        orig = _as_points(origins)
        dirs = _as_points(directions)
        denom = dirs @ self.normal
        numer = (self.point - orig) @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = numer / denom
        t = np.where(np.abs(denom) > 1e-15, t, np.nan)
        return np.where(t > 0.0, t, np.nan)


@dataclass(frozen=True)
class Sphere(Surface):
    """Sphere surface of ``radius`` around ``center``."""

    center: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "center", np.asarray(self.center, dtype=np.float64).reshape(3)
        )
        if self.radius <= 0:
            raise ValueError(f"radius must be positive, got {self.radius}")

    def distance(self, points: np.ndarray) -> np.ndarray:
        pts = _as_points(points)
        return np.abs(np.linalg.norm(pts - self.center, axis=1) - self.radius)

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        orig = _as_points(origins) - self.center
        dirs = _as_points(directions)
        a = np.sum(dirs * dirs, axis=1)
        b = 2.0 * np.sum(orig * dirs, axis=1)
        c = np.sum(orig * orig, axis=1) - self.radius**2
        return _smallest_positive_root(a, b, c)


@dataclass(frozen=True)
class Cylinder(Surface):
    """Infinite cylinder wall: ``radius`` around the line through
    ``axis_point`` with direction ``axis_direction``."""

    axis_point: np.ndarray
    axis_direction: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "axis_point",
            np.asarray(self.axis_point, dtype=np.float64).reshape(3),
        )
        object.__setattr__(
            self, "axis_direction", _unit(self.axis_direction, "axis_direction")
        )
        if self.radius <= 0:
            raise ValueError(f"radius must be positive, got {self.radius}")

    def _radial(self, points: np.ndarray) -> np.ndarray:
        rel = _as_points(points) - self.axis_point
        along = rel @ self.axis_direction
        return rel - along[:, None] * self.axis_direction

    def distance(self, points: np.ndarray) -> np.ndarray:
        radial = self._radial(points)
        return np.abs(np.linalg.norm(radial, axis=1) - self.radius)

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        orig_r = self._radial(origins)
        dirs = _as_points(directions)
        dirs_r = dirs - (dirs @ self.axis_direction)[:, None] * self.axis_direction
        a = np.sum(dirs_r * dirs_r, axis=1)
        b = 2.0 * np.sum(orig_r * dirs_r, axis=1)
        c = np.sum(orig_r * orig_r, axis=1) - self.radius**2
        return _smallest_positive_root(a, b, c)


@dataclass(frozen=True)
class CompositeMin(Surface):
    """Union of surfaces: nearest distance, first hit over all parts."""

    parts: tuple[Surface, ...]

    def __post_init__(self) -> None:
        if not self.parts:
            raise ValueError("CompositeMin needs at least one surface")
        object.__setattr__(self, "parts", tuple(self.parts))

    def distance(self, points: np.ndarray) -> np.ndarray:
        stacked = np.stack([part.distance(points) for part in self.parts])
        return stacked.min(axis=0)

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        stacked = np.stack(
            [part.intersect(origins, directions) for part in self.parts]
        )
        all_nan = np.all(np.isnan(stacked), axis=0)
        with np.errstate(invalid="ignore"):
            nearest = np.nanmin(stacked, axis=0)
        return np.where(all_nan, np.nan, nearest)


def _smallest_positive_root(
    a: np.ndarray, b: np.ndarray, c: np.ndarray
) -> np.ndarray:
    """Per-element smallest positive root of a t^2 + b t + c = 0, else NaN.

    Handles the degenerate a == 0 case (ray parallel to a cylinder axis has
    no quadratic term) as a linear equation.
    """
    t = np.full(a.shape, np.nan, dtype=np.float64)
    quad = np.abs(a) > 1e-15
    disc = b * b - 4.0 * a * c
    ok = quad & (disc >= 0.0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-b - sq) / (2.0 * a)
        t2 = (-b + sq) / (2.0 * a)
    lo = np.minimum(t1, t2)
    hi = np.maximum(t1, t2)
    pick = np.where(lo > 0.0, lo, hi)
    t = np.where(ok & (pick > 0.0), pick, t)

    linear = ~quad & (np.abs(b) > 1e-15)
    with np.errstate(divide="ignore", invalid="ignore"):
        tl = -c / b
    t = np.where(linear & (tl > 0.0), tl, t)
    return t


def tube_surface(radius: float, cap_depth: float) -> CompositeMin:
    """Cylinder wall along +z through the origin, closed by a cap plane."""
    return CompositeMin(
        parts=(
            Cylinder(
                axis_point=(0.0, 0.0, 0.0),
                axis_direction=(0.0, 0.0, 1.0),
                radius=radius,
            ),
            Plane(point=(0.0, 0.0, cap_depth), normal=(0.0, 0.0, 1.0)),
        )
    )
