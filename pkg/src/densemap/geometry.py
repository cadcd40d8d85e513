"""Camera model, pose algebra, stereo triangulation and pinhole projection.

All metric quantities are in millimeters. Pixel (u, v) refers to the center
of image cell (u, v); sub-pixel positions are continuous coordinates in that
convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

# Disparities at or below this floor (pixels) triangulate to an invalid depth
# instead of blowing up toward infinity.
DEFAULT_MIN_DISPARITY = 0.1

_ORTHO_TOL = 1e-9


@dataclass
class StereoRig:
    """Rectified stereo camera model.

    Args:
        focal_length_px: Shared focal length in pixels (used for triangulation).
        baseline_mm: Distance between the two optical centers, millimeters.
        intrinsics: 3x3 pinhole matrix (fx, fy, cx, cy, zero skew).
        image_width: Image width in pixels.
        image_height: Image height in pixels.
    """

    focal_length_px: float
    baseline_mm: float
    intrinsics: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64)
        if self.focal_length_px <= 0:
            raise ValueError(f"focal length must be positive, got {self.focal_length_px}")
        if self.baseline_mm <= 0:
            raise ValueError(f"baseline must be positive, got {self.baseline_mm}")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError(
                f"image dimensions must be positive, got {self.image_width}x{self.image_height}"
            )
        if self.intrinsics.shape != (3, 3):
            raise ValueError(f"intrinsics must be 3x3, got {self.intrinsics.shape}")
        if self.intrinsics[0, 0] == 0 or self.intrinsics[1, 1] == 0:
            raise ValueError("intrinsics must be invertible (fx, fy nonzero)")

    @classmethod
    def from_params(
        cls,
        fx: float,
        baseline_mm: float,
        cx: float,
        cy: float,
        width: int,
        height: int,
        fy: float | None = None,
    ) -> "StereoRig":
        """Build a rig from scalar parameters; fy defaults to fx."""
        fy = fx if fy is None else fy
        K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        return cls(fx, baseline_mm, K, int(width), int(height))

    @property
    def fx(self) -> float:
        return float(self.intrinsics[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsics[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsics[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsics[1, 2])

    def contains_pixel(self, u: float, v: float) -> bool:
        """True when (u, v) falls inside the image cell grid."""
        return -0.5 <= u < self.image_width - 0.5 and -0.5 <= v < self.image_height - 0.5


@dataclass
class Pose:
    """Rigid camera-to-world transform: rotation (3x3) and translation (mm)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.rotation.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {self.rotation.shape}")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > _ORTHO_TOL:
            raise ValueError(f"rotation is not orthonormal (max deviation {err:.3e})")
        det = np.linalg.det(self.rotation)
        if abs(det - 1.0) > _ORTHO_TOL:
            raise ValueError(f"rotation determinant must be +1, got {det}")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(cls, qx: float, qy: float, qz: float, qw: float,
                        translation) -> "Pose":
        """Build from an (x, y, z, w) quaternion; normalizes before converting."""
        rot = _ScipyRotation.from_quat([qx, qy, qz, qw]).as_matrix()
        return cls(rot, np.asarray(translation, dtype=np.float64))

    def as_quaternion(self) -> np.ndarray:
        """Quaternion in (x, y, z, w) order."""
        return _ScipyRotation.from_matrix(self.rotation).as_quat()

    def compose(self, other: "Pose") -> "Pose":
        """Returns self applied after other: (self * other)(x) = self(other(x))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply the transform to one point (3,) or a batch (N, 3)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


@dataclass
class DepthField:
    """Per-pixel metric depth (mm) with a validity mask.

    Invalid entries are stored as 0; ``depth`` is finite and positive exactly
    where ``valid_mask`` is set.
    """

    depth: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self):
        depth = np.asarray(self.depth)
        if depth.dtype not in (np.float32, np.float64):
            depth = depth.astype(np.float32)
        self.depth = depth
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        if self.depth.shape != self.valid_mask.shape:
            raise ValueError("depth and valid_mask shapes differ")
        bad = self.valid_mask & ~(np.isfinite(self.depth) & (self.depth > 0))
        if bad.any():
            raise ValueError(f"{int(bad.sum())} valid pixels have non-positive or non-finite depth")
        self.depth = np.where(self.valid_mask, self.depth, np.float32(0.0))

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


def triangulate_depth(rig: StereoRig, disparity, min_disparity: float = DEFAULT_MIN_DISPARITY):
    """Convert disparity (px) to depth (mm): depth = f * b / disparity.

    Disparities at or below ``min_disparity`` yield NaN (invalid, no exception).
    Accepts scalars or arrays.
    """
    disp = np.asarray(disparity, dtype=np.float64)
    fb = rig.focal_length_px * rig.baseline_mm
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = np.where(disp > min_disparity, fb / disp, np.nan)
    if np.isscalar(disparity) or disp.ndim == 0:
        return float(depth)
    return depth


def backproject_point(rig: StereoRig, pose: Pose, pixel, depth: float) -> np.ndarray:
    """Lift one pixel with known depth into world coordinates.

    Computes pose applied to the camera-frame point depth * K^-1 [u, v, 1]^T.

    Args:
        pixel: (u, v) position, must lie inside the image bounds.
        depth: Camera-frame depth in mm, must be positive.

    Returns:
        World point (3,) in mm.
    """
    u, v = float(pixel[0]), float(pixel[1])
    if depth <= 0:
        raise ValueError(f"depth must be positive, got {depth}")
    if not rig.contains_pixel(u, v):
        raise ValueError(f"pixel ({u}, {v}) outside {rig.image_width}x{rig.image_height} image")
    cam = np.array([(u - rig.cx) / rig.fx, (v - rig.cy) / rig.fy, 1.0]) * depth
    return pose.transform(cam)


def backproject_pixels(rig: StereoRig, pose: Pose, pixels: np.ndarray,
                       depths: np.ndarray) -> np.ndarray:
    """Vectorized back-projection of (N, 2) pixels with (N,) positive depths."""
    pixels = np.asarray(pixels, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    x = (pixels[:, 0] - rig.cx) / rig.fx
    y = (pixels[:, 1] - rig.cy) / rig.fy
    cam = np.stack([x, y, np.ones_like(x)], axis=1) * depths[:, None]
    return pose.transform(cam)


def project_point(rig: StereoRig, pose: Pose, world_point) -> tuple[np.ndarray, float] | None:
    """Project a world point into the camera; None when it lies behind it.

    Returns:
        (pixel (u, v), camera-frame depth in mm), or None for depth <= 0.
    """
    pixels, depths = project_points(rig, pose, np.asarray(world_point, dtype=np.float64)[None, :])
    if depths[0] <= 0:
        return None
    return pixels[0], float(depths[0])


def project_points(rig: StereoRig, pose: Pose,
                   points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of (N, 3) world points into the camera.

    Returns:
        pixels: (N, 2) continuous pixel coordinates; NaN where depth <= 0.
        depths: (N,) camera-frame depths (may be <= 0 for behind-camera points).
    """
    pts = np.asarray(points, dtype=np.float64)
    cam = pose.inverse().transform(pts)
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(z > 0, rig.fx * cam[:, 0] / z + rig.cx, np.nan)
        v = np.where(z > 0, rig.fy * cam[:, 1] / z + rig.cy, np.nan)
    return np.stack([u, v], axis=1), z


def depth_field_from_disparity(rig: StereoRig, disparity: np.ndarray,
                               valid_mask: np.ndarray,
                               min_disparity: float = DEFAULT_MIN_DISPARITY) -> DepthField:
    """Triangulate a whole disparity field into a DepthField.

    Pixels that are invalid in the input, or whose disparity falls at or below
    the floor, come out invalid.
    """
    depth = triangulate_depth(rig, disparity, min_disparity)
    valid = np.asarray(valid_mask, dtype=bool) & np.isfinite(depth)
    return DepthField(np.where(valid, depth, 0.0), valid)


def geodesic_rotation_deg(a: Pose, b: Pose) -> float:
    """Geodesic angle (degrees) between the rotations of two poses."""
    rel = a.rotation.T @ b.rotation
    c = (np.trace(rel) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def load_tum_trajectory(path) -> list[tuple[float, Pose]]:
    """Read a TUM trajectory file: `timestamp tx ty tz qx qy qz qw` per line.

    Lines starting with `#` and blank lines are skipped. Quaternions are in
    (x, y, z, w) order; poses are camera-to-world. Translation units are taken
    as-is (this toolkit uses millimeters throughout).
    """
    out: list[tuple[float, Pose]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ValueError(
                    f"{path}:{lineno}: expected 8 fields "
                    f"(timestamp tx ty tz qx qy qz qw), got {len(parts)}"
                )
            vals = [float(p) for p in parts]
            ts, tx, ty, tz, qx, qy, qz, qw = vals
            out.append((ts, Pose.from_quaternion(qx, qy, qz, qw, [tx, ty, tz])))
    return out


def save_tum_trajectory(path, items: list[tuple[float, Pose]]) -> None:
    """Write a TUM trajectory file (inverse of load_tum_trajectory)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# timestamp tx ty tz qx qy qz qw\n")
        for ts, pose in items:
            q = pose.as_quaternion()
            t = pose.translation
            fh.write(
                f"{ts:.6f} {t[0]:.9f} {t[1]:.9f} {t[2]:.9f} "
                f"{q[0]:.9f} {q[1]:.9f} {q[2]:.9f} {q[3]:.9f}\n"
            )
