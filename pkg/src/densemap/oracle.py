"""Exhaustive integer-disparity search used as an independent reference.

Deliberately simple and slow: a full SSD scan over every candidate disparity
with exact float64 window sums. Suited to small images; the dense matcher is
the production path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matcher import DisparityField, RectifiedStereoPair


@dataclass(frozen=True)
class OracleConfig:
    """Exhaustive-search settings.

    max_disparity None resolves to a quarter of the image width. The scan
    allocates an (H, W, max_disparity+1) float64 cost volume, so keep the
    image and disparity range small.
    """

    window_size: int = 9
    max_disparity: int | None = None
    subpixel_refine: bool = False

    def __post_init__(self) -> None:
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError(
                f"window_size must be odd and positive, got {self.window_size}"
            )
        if self.max_disparity is not None and self.max_disparity < 1:
            raise ValueError(
                f"max_disparity must be >= 1, got {self.max_disparity}"
            )

    def resolved_max_disparity(self, image_width: int) -> int:
        if self.max_disparity is not None:
            return self.max_disparity
        return max(1, image_width // 4)


def _box_sum(values: np.ndarray, size: int) -> np.ndarray:
    """Exact sums of every size x size window (valid positions only)."""
    summed = np.cumsum(np.cumsum(values, axis=0, dtype=np.float64), axis=1)
    summed = np.pad(summed, ((1, 0), (1, 0)))
    return (
        summed[size:, size:]
        - summed[:-size, size:]
        - summed[size:, :-size]
        + summed[:-size, :-size]
    )


def exhaustive_disparity(
    pair: RectifiedStereoPair, config: OracleConfig | None = None
) -> DisparityField:
    """Per-pixel argmin of windowed SSD over all integer disparities.

    A pixel is valid only where every candidate in 0..max_disparity keeps
    both windows fully inside their images, i.e. the left margin of width
    max_disparity and the window border are cropped. Anything less makes
    the search range position-dependent and the argmin untrustworthy
    there. SSD ties break toward the smaller disparity. With
    subpixel_refine, a three-point parabola through the SSD valley adjusts
    the winner by up to half a pixel where both neighbors exist.
    """
    config = config or OracleConfig()
    left = pair.left.astype(np.float64)
    right = pair.right.astype(np.float64)
    h, w = left.shape
    k = config.window_size
    half = k // 2
    max_d = config.resolved_max_disparity(w)

    cost = np.full((h, w, max_d + 1), np.inf, dtype=np.float64)
    for d in range(max_d + 1):
        if w - d < k:
            break
        diff2 = (left[:, d:] - right[:, : w - d]) ** 2
        sums = _box_sum(diff2, k)
        cost[half : h - half, d + half : w - half, d] = sums

    best = np.argmin(cost, axis=2)
    best_cost = np.take_along_axis(cost, best[:, :, None], axis=2)[:, :, 0]
    valid = np.zeros((h, w), dtype=bool)
    valid[half : h - half, max_d + half : w - half] = True
    valid &= np.isfinite(best_cost)
    disparity = best.astype(np.float64)

    if config.subpixel_refine:
        lo = np.clip(best - 1, 0, max_d)
        hi = np.clip(best + 1, 0, max_d)
        c_lo = np.take_along_axis(cost, lo[:, :, None], axis=2)[:, :, 0]
        c_hi = np.take_along_axis(cost, hi[:, :, None], axis=2)[:, :, 0]
        finite = np.isfinite(c_lo) & np.isfinite(c_hi) & np.isfinite(best_cost)
        denom = np.zeros_like(best_cost)
        np.add(c_lo, c_hi, out=denom, where=finite)
        np.subtract(denom, 2.0 * best_cost, out=denom, where=finite)
        refinable = (
            valid
            & (lo == best - 1)
            & (hi == best + 1)
            & finite
            & (denom > 0.0)
        )
        numerator = np.zeros_like(disparity)
        np.subtract(c_lo, c_hi, out=numerator, where=refinable)
        offset = np.zeros_like(disparity)
        np.divide(0.5 * numerator, denom, out=offset, where=refinable)
        disparity = disparity + np.clip(offset, -0.5, 0.5) * refinable

    disparity = np.where(valid, disparity, 0.0)
    confidence = np.where(valid, 1.0, 0.0)
    return DisparityField(
        disparity=disparity.astype(np.float32),
        confidence=confidence.astype(np.float32),
        valid_mask=valid,
    )
