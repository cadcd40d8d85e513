"""Shared fixtures and synthetic-image helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from densemap.geometry import StereoRig
from densemap.matcher import MatcherConfig, RectifiedStereoPair, match


def wave_texture(rng: np.random.Generator, height: int, width: int,
                 octaves: int = 5, finest_px: float = 4.0) -> np.ndarray:
    """Band-limited test texture: random cosine waves, amplitudes growing
    with wavelength so coarse pyramid levels keep usable gradient."""
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.zeros((height, width))
    for octave in range(octaves):
        wavelength = finest_px * 2.0 ** (octaves - 1 - octave)
        amplitude = 0.7 ** octave
        for _ in range(3):
            theta = rng.uniform(0.0, 2.0 * np.pi)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            img += amplitude * np.cos(
                2.0 * np.pi * (x * np.cos(theta) + y * np.sin(theta))
                / wavelength + phase
            )
    img -= img.min()
    img /= img.max()
    return img


def integer_shift_pair(rng: np.random.Generator, height: int, width: int,
                       shift: int, margin: int = 16) -> RectifiedStereoPair:
    """Stereo pair where right(x) = left(x + shift), i.e. ground-truth
    disparity is exactly `shift` px everywhere (x_r = x_l - d)."""
    if shift < 0 or shift > margin:
        raise ValueError(f"shift must be in [0, {margin}]")
    big = wave_texture(rng, height, width + 2 * margin)
    left = big[:, margin:margin + width]
    right = big[:, margin + shift:margin + shift + width]
    return RectifiedStereoPair(
        left=left.astype(np.float32), right=right.astype(np.float32)
    )


@pytest.fixture(scope="session")
def rig640() -> StereoRig:
    return StereoRig.from_params(
        fx=450.0, baseline_mm=5.0, cx=319.5, cy=239.5, width=640, height=480
    )


@pytest.fixture(scope="session", autouse=True)
def warm_jit() -> None:
    """Compile (or load from cache) the hot kernels once up front so no
    individual test pays the cost inside a timed section."""
    rng = np.random.default_rng(0)
    pair = integer_shift_pair(rng, 64, 64, 2)
    match(pair, MatcherConfig(pyramid_levels=2))
