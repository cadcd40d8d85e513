"""Synthetic rectified stereo sequences with exact analytic ground truth.

Scenes are textured analytic surfaces observed by a virtual rectified rig.
Both views sample the texture at their own ray-surface intersections, so
ground-truth disparity f*b/z is exact even on slanted and curved geometry,
with no image warping involved. Texture is a seeded sum of band-limited 3-D
cosine waves: a pure function of world position, hence consistent across
views and frames.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import save_grayscale_png, write_config, write_pfm
from .geometry import DepthField, Pose, StereoRig, save_tum_trajectory
from .matcher import DisparityField, RectifiedStereoPair
from .surfaces import Plane, Sphere, Surface, tube_surface

GEOMETRIES = ("plane", "slant", "sphere", "tube")
TRAJECTORIES = ("static", "dolly", "arc")
FRAME_PERIOD_S = 1.0 / 30.0


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to render one deterministic scene sequence.

    Geometry parameters are read per geometry:
      plane: plane_depth_mm (fronto-parallel at that depth);
      slant: ramp_disparity (disparity at the left and right image edge,
             realized as a plane tilted about the vertical axis);
      sphere: sphere_center_mm, sphere_radius_mm;
      tube: tube_radius_mm (wall around the +z axis), tube_cap_depth_mm
            (closing plane).
    The texture's finest wavelength is texture_finest_px pixels at the
    scene's nominal depth; octaves double the wavelength from there.
    """

    rig: StereoRig
    geometry: str = "plane"
    frames: int = 1
    seed: int = 0
    trajectory: str = "static"
    plane_depth_mm: float = 180.0
    ramp_disparity: tuple[float, float] = (5.0, 20.0)
    sphere_center_mm: tuple[float, float, float] = (0.0, 0.0, 100.0)
    sphere_radius_mm: float = 70.0
    tube_radius_mm: float = 36.0
    tube_cap_depth_mm: float = 80.0
    texture_octaves: int = 7
    texture_contrast: float = 0.9
    texture_finest_px: float = 4.0
    dolly_step_mm: float = 1.0
    arc_step_deg: float = 0.5
    arc_pivot_mm: float | None = None

    def __post_init__(self) -> None:
        if self.geometry not in GEOMETRIES:
            raise ValueError(
                f"geometry must be one of {GEOMETRIES}, got {self.geometry!r}"
            )
        if self.trajectory not in TRAJECTORIES:
            raise ValueError(
                f"trajectory must be one of {TRAJECTORIES}, "
                f"got {self.trajectory!r}"
            )
        if self.frames < 1:
            raise ValueError(f"frames must be >= 1, got {self.frames}")
        if self.texture_octaves < 1:
            raise ValueError(
                f"texture_octaves must be >= 1, got {self.texture_octaves}"
            )
        if not 0.0 < self.texture_contrast <= 1.0:
            raise ValueError(
                "texture_contrast must be in (0, 1], got "
                f"{self.texture_contrast}"
            )
        if self.texture_finest_px <= 0:
            raise ValueError(
                f"texture_finest_px must be positive, got {self.texture_finest_px}"
            )
        d0, d1 = self.ramp_disparity
        if d0 <= 0 or d1 <= 0:
            raise ValueError(
                f"ramp disparities must be positive, got {self.ramp_disparity}"
            )

    def surface(self) -> Surface:
        if self.geometry == "plane":
            return Plane(
                point=(0.0, 0.0, self.plane_depth_mm), normal=(0.0, 0.0, 1.0)
            )
        if self.geometry == "slant":
            return self._slant_plane()
        if self.geometry == "sphere":
            return Sphere(
                center=self.sphere_center_mm, radius=self.sphere_radius_mm
            )
        return tube_surface(self.tube_radius_mm, self.tube_cap_depth_mm)

    def _slant_plane(self) -> Plane:
        """Plane z = a + m*x whose disparity runs linearly from
        ramp_disparity[0] at column 0 to ramp_disparity[1] at the last
        column (a plane slanted about the vertical axis projects to an
        exactly linear disparity ramp)."""
        rig = self.rig
        d0, d1 = self.ramp_disparity
        slope_px = (d0 - d1) / (rig.image_width - 1)
        center_disp = d0 + slope_px * (0.0 - rig.cx)
        if center_disp <= 0:
            raise ValueError(
                f"ramp {self.ramp_disparity} yields non-positive disparity "
                "at the optical axis"
            )
        a = rig.focal_length_px * rig.baseline_mm / center_disp
        m = slope_px * a / rig.baseline_mm
        return Plane(point=(0.0, 0.0, a), normal=(m, 0.0, -1.0))

    def nominal_depth_mm(self) -> float:
        """Depth used to anchor the texture's pixel-scale wavelengths."""
        if self.geometry == "plane":
            return self.plane_depth_mm
        if self.geometry == "slant":
            d0, d1 = self.ramp_disparity
            mid = (d0 + d1) / 2.0
            return self.rig.focal_length_px * self.rig.baseline_mm / mid
        if self.geometry == "sphere":
            return self.sphere_center_mm[2] - self.sphere_radius_mm
        return (self.tube_radius_mm + self.tube_cap_depth_mm) / 2.0

    def pose(self, frame_index: int) -> Pose:
        if not 0 <= frame_index < self.frames:
            raise ValueError(
                f"frame_index {frame_index} outside [0, {self.frames})"
            )
        if self.trajectory == "static":
            return Pose.identity()
        if self.trajectory == "dolly":
            return Pose(
                rotation=np.eye(3),
                translation=np.array(
                    [0.0, 0.0, frame_index * self.dolly_step_mm]
                ),
            )
        angle = np.deg2rad(frame_index * self.arc_step_deg)
        pivot_z = (
            self.arc_pivot_mm
            if self.arc_pivot_mm is not None
            else self.nominal_depth_mm()
        )
        pivot = np.array([0.0, 0.0, pivot_z])
        c, s = np.cos(angle), np.sin(angle)
        rotation = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        return Pose(rotation=rotation, translation=pivot - rotation @ pivot)


class _WaveTexture:
    """Seeded band-limited texture: a fixed set of 3-D cosine waves.

    Octave o uses wavelength finest * 2^(octaves-1-o) mm with a few random
    directions and phases each; the summed signal is squashed through tanh
    (scaled by its RMS) into [0.5 - contrast/2, 0.5 + contrast/2].
    """

    _WAVES_PER_OCTAVE = 4
    _AMPLITUDE_DECAY = 0.7

    def __init__(self, spec: SceneSpec) -> None:
        rng = np.random.default_rng(spec.seed)
        finest_mm = (
            spec.texture_finest_px
            * spec.nominal_depth_mm()
            / spec.rig.focal_length_px
        )
        dirs, freqs, phases, amps = [], [], [], []
        for octave in range(spec.texture_octaves):
            wavelength = finest_mm * 2.0 ** (spec.texture_octaves - 1 - octave)
            amplitude = self._AMPLITUDE_DECAY**octave
            for _ in range(self._WAVES_PER_OCTAVE):
                direction = rng.normal(size=3)
                direction /= np.linalg.norm(direction)
                dirs.append(direction)
                freqs.append(2.0 * np.pi / wavelength)
                phases.append(rng.uniform(0.0, 2.0 * np.pi))
                amps.append(amplitude)
        self._dirs = np.asarray(dirs)
        self._freqs = np.asarray(freqs)
        self._phases = np.asarray(phases)
        self._amps = np.asarray(amps)
        self._rms = np.sqrt(np.sum(self._amps**2) / 2.0)
        self._contrast = spec.texture_contrast

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Texture value in [0, 1] for (N, 3) world points."""
        projected = points @ self._dirs.T
        signal = np.cos(projected * self._freqs + self._phases) @ self._amps
        return 0.5 + 0.5 * self._contrast * np.tanh(signal / (2.0 * self._rms))


def _pixel_ray_directions(rig: StereoRig) -> np.ndarray:
    """Camera-frame ray directions with unit z for every pixel center,
    flattened row-major to (H*W, 3); the intersection parameter along these
    rays is camera depth."""
    u = np.arange(rig.image_width, dtype=np.float64)
    v = np.arange(rig.image_height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    x = (uu - rig.cx) / rig.fx
    y = (vv - rig.cy) / rig.fy
    dirs = np.stack([x, y, np.ones_like(x)], axis=-1)
    return dirs.reshape(-1, 3)


def render_pair(
    spec: SceneSpec, frame_index: int
) -> tuple[RectifiedStereoPair, DisparityField, DepthField, Pose]:
    """Render one frame: stereo pair, exact GT disparity and depth, pose.

    Raises ValueError when any pixel's ray misses the surface (geometry out
    of view) in either camera.
    """
    rig = spec.rig
    pose = spec.pose(frame_index)
    surface = spec.surface()
    texture = _WaveTexture(spec)
    h, w = rig.image_height, rig.image_width

    dirs_cam = _pixel_ray_directions(rig)
    dirs_world = dirs_cam @ pose.rotation.T

    left_origin = np.broadcast_to(pose.translation, dirs_world.shape)
    depth_left = surface.intersect(left_origin, dirs_world)
    right_center = pose.transform(np.array([rig.baseline_mm, 0.0, 0.0]))
    right_origin = np.broadcast_to(right_center, dirs_world.shape)
    depth_right = surface.intersect(right_origin, dirs_world)
    for name, depth in (("left", depth_left), ("right", depth_right)):
        if not np.all(np.isfinite(depth)):
            raise ValueError(
                f"geometry leaves the {name} view at frame {frame_index}: "
                f"{int(np.isnan(depth).sum())} rays miss the surface"
            )

    points_left = left_origin + depth_left[:, None] * dirs_world
    points_right = right_origin + depth_right[:, None] * dirs_world
    left = texture(points_left).reshape(h, w).astype(np.float32)
    right = texture(points_right).reshape(h, w).astype(np.float32)

    gray8 = np.clip(np.rint(left * 255.0), 0, 255).astype(np.uint8)
    pair = RectifiedStereoPair(
        left=left,
        right=right,
        left_color=np.repeat(gray8[:, :, None], 3, axis=2),
    )

    depth_map = depth_left.reshape(h, w)
    disparity = rig.focal_length_px * rig.baseline_mm / depth_map
    ones = np.ones((h, w), dtype=bool)
    gt_disparity = DisparityField(
        disparity=disparity,
        confidence=np.ones((h, w), dtype=np.float32),
        valid_mask=ones,
    )
    gt_depth = DepthField(depth=depth_map, valid_mask=ones)
    return pair, gt_disparity, gt_depth, pose


def reference_spec(spec: SceneSpec) -> dict[str, str]:
    """Flat description of the scene's reference surface for evaluation."""
    if spec.geometry in ("plane", "slant"):
        plane = spec.surface() if spec.geometry == "slant" else Plane(
            point=(0.0, 0.0, spec.plane_depth_mm), normal=(0.0, 0.0, 1.0)
        )
        return {
            "geometry": "plane",
            "point": ",".join(f"{v:.9g}" for v in plane.point),
            "normal": ",".join(f"{v:.9g}" for v in plane.normal),
        }
    if spec.geometry == "sphere":
        return {
            "geometry": "sphere",
            "center": ",".join(f"{v:.9g}" for v in spec.sphere_center_mm),
            "radius": f"{spec.sphere_radius_mm:.9g}",
        }
    return {
        "geometry": "tube",
        "radius": f"{spec.tube_radius_mm:.9g}",
        "cap_depth": f"{spec.tube_cap_depth_mm:.9g}",
    }


def write_sequence(spec: SceneSpec, out_dir: str | Path) -> None:
    """Emit the full sequence: images, GT fields, trajectory, reference.

    Writes left_NNNN.png / right_NNNN.png, disp_NNNN.pfm / depth_NNNN.pfm,
    a TUM trajectory (traj.txt, one line per frame at 30 Hz timestamps) and
    the evaluation reference surface (reference.txt).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trajectory = []
    for i in range(spec.frames):
        pair, gt_disparity, gt_depth, pose = render_pair(spec, i)
        save_grayscale_png(out / f"left_{i:04d}.png", pair.left)
        save_grayscale_png(out / f"right_{i:04d}.png", pair.right)
        write_pfm(out / f"disp_{i:04d}.pfm", gt_disparity.disparity)
        write_pfm(out / f"depth_{i:04d}.pfm", gt_depth.depth)
        trajectory.append((i * FRAME_PERIOD_S, pose))
    save_tum_trajectory(out / "traj.txt", trajectory)
    write_config(out / "reference.txt", reference_spec(spec))
