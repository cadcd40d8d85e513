"""Probabilistic dense disparity estimation on rectified stereo pairs.

The matcher tiles the left image with overlapping square patches, runs a
coarse-to-fine inverse-compositional search for each patch's horizontal
shift, scores every converged patch against small disparity disturbances to
get a posterior-style confidence, and fuses the surviving patches into a
per-pixel disparity field with Gaussian spatial weighting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import _kernels

logger = logging.getLogger(__name__)

DEFAULT_CANDIDATE_OFFSETS = (0.0, 0.5, -0.5, 1.0, -1.0)
CONVERGENCE_TOL_PX = 0.01
HESSIAN_FLOOR = 1e-8
SIGMA_R_FLOOR = 1e-12


@dataclass(frozen=True)
class MatcherConfig:
    """Tunable knobs for the dense matcher.

    max_disparity None means a quarter of the image width, resolved at match
    time. Candidate offsets are the disparity disturbances scored by the
    confidence model; offset 0 must come first.
    """

    patch_size: int = 16
    stride: int = 8
    pyramid_levels: int = 4
    max_iterations: int = 12
    convergence_tol: float = CONVERGENCE_TOL_PX
    max_disparity: float | None = None
    candidate_offsets: tuple[float, ...] = DEFAULT_CANDIDATE_OFFSETS
    sigma_s: float = 4.0
    probability_threshold: float = 0.15
    min_valid_patch_ratio: float = 0.75

    def __post_init__(self) -> None:
        if self.patch_size < 2:
            raise ValueError(f"patch_size must be >= 2, got {self.patch_size}")
        if not 1 <= self.stride <= self.patch_size:
            raise ValueError(
                f"stride must be in [1, patch_size], got {self.stride}"
            )
        if self.pyramid_levels < 1:
            raise ValueError(
                f"pyramid_levels must be >= 1, got {self.pyramid_levels}"
            )
        if self.max_iterations < 1:
            raise ValueError(
                f"max_iterations must be >= 1, got {self.max_iterations}"
            )
        if self.convergence_tol <= 0:
            raise ValueError(
                f"convergence_tol must be positive, got {self.convergence_tol}"
            )
        if self.max_disparity is not None and self.max_disparity <= 0:
            raise ValueError(
                f"max_disparity must be positive, got {self.max_disparity}"
            )
        offsets = tuple(float(v) for v in self.candidate_offsets)
        if not offsets or offsets[0] != 0.0:
            raise ValueError("candidate_offsets must start with 0.0")
        object.__setattr__(self, "candidate_offsets", offsets)
        if self.sigma_s <= 0:
            raise ValueError(f"sigma_s must be positive, got {self.sigma_s}")
        if not 0.0 <= self.probability_threshold <= 1.0:
            raise ValueError(
                "probability_threshold must be in [0, 1], got "
                f"{self.probability_threshold}"
            )
        if not 0.0 < self.min_valid_patch_ratio <= 1.0:
            raise ValueError(
                "min_valid_patch_ratio must be in (0, 1], got "
                f"{self.min_valid_patch_ratio}"
            )

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str]) -> "MatcherConfig":
        """Build a config from flat string key/value pairs (config files)."""
        kwargs = {}
        converters = {
            "patch_size": int,
            "stride": int,
            "pyramid_levels": int,
            "max_iterations": int,
            "convergence_tol": float,
            "max_disparity": float,
            "sigma_s": float,
            "probability_threshold": float,
            "min_valid_patch_ratio": float,
        }
        for key, conv in converters.items():
            if key in mapping:
                kwargs[key] = conv(mapping[key])
        if "candidate_offsets" in mapping:
            kwargs["candidate_offsets"] = tuple(
                float(tok) for tok in mapping["candidate_offsets"].split(",")
            )
        return cls(**kwargs)

    def resolved_max_disparity(self, image_width: int) -> float:
        if self.max_disparity is not None:
            return self.max_disparity
        return image_width / 4.0

    def min_image_side(self) -> int:
        """Smallest image dimension the pyramid supports."""
        return self.patch_size * 2 ** (self.pyramid_levels - 1)


@dataclass(frozen=True)
class RectifiedStereoPair:
    """A rectified grayscale pair, intensities in [0, 1], same shape.

    left_color optionally carries an (H, W, 3) uint8 image used only for
    point colouring downstream; it never enters the matching math.
    """

    left: np.ndarray
    right: np.ndarray
    left_color: np.ndarray | None = None

    def __post_init__(self) -> None:
        left = np.ascontiguousarray(self.left, dtype=np.float32)
        right = np.ascontiguousarray(self.right, dtype=np.float32)
        if left.ndim != 2 or right.ndim != 2:
            raise ValueError("stereo images must be 2-D grayscale arrays")
        if left.shape != right.shape:
            raise ValueError(
                f"left/right shapes differ: {left.shape} vs {right.shape}"
            )
        for name, img in (("left", left), ("right", right)):
            if not np.all(np.isfinite(img)):
                raise ValueError(f"{name} image contains non-finite values")
            if img.min() < -1e-6 or img.max() > 1.0 + 1e-6:
                raise ValueError(
                    f"{name} image must be normalized to [0, 1]; "
                    f"got range [{img.min():.4g}, {img.max():.4g}]"
                )
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        if self.left_color is not None:
            color = np.asarray(self.left_color)
            if color.ndim != 3 or color.shape[:2] != left.shape:
                raise ValueError(
                    "left_color must be (H, W, 3) matching the pair shape"
                )
            object.__setattr__(
                self, "left_color", np.ascontiguousarray(color, dtype=np.uint8)
            )

    @property
    def width(self) -> int:
        return self.left.shape[1]

    @property
    def height(self) -> int:
        return self.left.shape[0]


@dataclass(frozen=True)
class PatchEstimate:
    """One patch's converged shift and its confidence."""

    center: tuple[float, float]
    disparity: float
    probability: float
    residual: float
    sigma_r: float
    coverage: float
    valid: bool
    degenerate: bool = False


@dataclass
class DisparityField:
    """Fused per-pixel output: disparity, peak patch probability, validity."""

    disparity: np.ndarray
    confidence: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self) -> None:
        disparity = np.asarray(self.disparity)
        if disparity.dtype not in (np.float32, np.float64):
            disparity = disparity.astype(np.float32)
        self.disparity = disparity
        self.confidence = np.asarray(self.confidence, dtype=np.float32)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        if not (
            self.disparity.shape == self.confidence.shape == self.valid_mask.shape
        ):
            raise ValueError("disparity/confidence/valid_mask shapes must match")

    @property
    def width(self) -> int:
        return self.disparity.shape[1]

    @property
    def height(self) -> int:
        return self.disparity.shape[0]

    @property
    def coverage(self) -> float:
        return float(self.valid_mask.mean())


@dataclass(frozen=True)
class KernelTable:
    """Precomputed Gaussian weights over in-patch pixel offsets.

    weights[i, j] is the weight of the pixel at row i, column j of a patch,
    measured from the patch's geometric center (which falls between pixels
    for even sizes). The weight function is exp(-|delta|^2 / (2 sigma_s^2)):
    1 at zero offset, symmetric, always in (0, 1].
    """

    patch_size: int
    sigma_s: float
    weights: np.ndarray

    @classmethod
    def build(cls, patch_size: int, sigma_s: float) -> "KernelTable":
        half = (patch_size - 1) / 2.0
        delta = np.arange(patch_size, dtype=np.float64) - half
        r2 = delta[:, None] ** 2 + delta[None, :] ** 2
        weights = np.exp(-r2 / (2.0 * sigma_s**2))
        return cls(patch_size=patch_size, sigma_s=sigma_s, weights=weights)

    def weight(self, dy: float, dx: float) -> float:
        """Gaussian weight of an arbitrary offset from the patch center."""
        return float(np.exp(-(dy * dy + dx * dx) / (2.0 * self.sigma_s**2)))


@dataclass
class FieldAccumulators:
    """Per-pixel fusion buffers: weighted-disparity and weight sums plus the
    best contributing patch probability."""

    weighted_sum: np.ndarray
    weight_sum: np.ndarray
    peak_probability: np.ndarray

    @classmethod
    def zeros(cls, height: int, width: int) -> "FieldAccumulators":
        return cls(
            weighted_sum=np.zeros((height, width), dtype=np.float64),
            weight_sum=np.zeros((height, width), dtype=np.float64),
            peak_probability=np.zeros((height, width), dtype=np.float64),
        )

    @property
    def width(self) -> int:
        return self.weight_sum.shape[1]

    @property
    def height(self) -> int:
        return self.weight_sum.shape[0]


def build_pyramid(
    pair: RectifiedStereoPair, config: MatcherConfig
) -> list[RectifiedStereoPair]:
    """Coarse-to-fine image pyramid; level L halves the level L-1 dimensions.

    Downsampling is 2x2 box averaging (odd trailing rows/columns dropped), so
    level L has dimensions floor(dim / 2^L). The returned list runs coarsest
    first and ends with the input pair (level 0). Raises ValueError when the
    input is too small for the requested depth.
    """
    min_side = config.min_image_side()
    if min(pair.height, pair.width) < min_side:
        raise ValueError(
            f"image {pair.width}x{pair.height} too small for "
            f"{config.pyramid_levels} pyramid levels; both sides must be "
            f">= {min_side}"
        )
    levels = [pair]
    for _ in range(config.pyramid_levels - 1):
        prev = levels[-1]
        levels.append(
            RectifiedStereoPair(
                left=_box_downsample(prev.left),
                right=_box_downsample(prev.right),
            )
        )
    levels.reverse()
    return levels


def _box_downsample(img: np.ndarray) -> np.ndarray:
    h2, w2 = img.shape[0] // 2, img.shape[1] // 2
    cropped = img[: 2 * h2, : 2 * w2]
    return cropped.reshape(h2, 2, w2, 2).mean(axis=(1, 3), dtype=np.float32)


def patch_grid(
    height: int, width: int, patch_size: int, stride: int
) -> tuple[np.ndarray, np.ndarray]:
    """Top-left origins tiling the image, flush to the bottom/right edges.

    Origins advance by the stride; a final row/column is appended when the
    stride does not land exactly on the edge, so every pixel is covered.
    Returns flat int64 arrays (origin_y, origin_x) in row-major patch order.
    """
    ys = _axis_origins(height, patch_size, stride)
    xs = _axis_origins(width, patch_size, stride)
    oy, ox = np.meshgrid(ys, xs, indexing="ij")
    return oy.ravel().astype(np.int64), ox.ravel().astype(np.int64)


def _axis_origins(extent: int, patch_size: int, stride: int) -> np.ndarray:
    last = extent - patch_size
    if last < 0:
        raise ValueError(f"patch_size {patch_size} exceeds image extent {extent}")
    origins = list(range(0, last + 1, stride))
    if origins[-1] != last:
        origins.append(last)
    return np.asarray(origins, dtype=np.int64)


def candidate_probabilities(
    residuals: Sequence[float], sigma_r: float, patch_size: int
) -> np.ndarray:
    """Softmax confidence over disparity candidates from their residuals.

    Each candidate's exponent is residual / (2 sigma_r^2 patch_size^2); the
    probabilities are exp(-exponent) normalized to sum to one, computed in
    float64 with max-shift for stability. sigma_r is floored to avoid a zero
    denominator on perfectly flat residual sets.
    """
    res = np.asarray(residuals, dtype=np.float64)
    if res.ndim != 1 or res.size == 0:
        raise ValueError("residuals must be a non-empty 1-D sequence")
    sigma = max(float(sigma_r), SIGMA_R_FLOOR)
    exponents = res / (2.0 * sigma * sigma * patch_size * patch_size)
    shifted = exponents - exponents.min()
    weights = np.exp(-shifted)
    return weights / weights.sum()


def residual_spread(residuals: np.ndarray) -> np.ndarray:
    """Per-patch sigma_r: population standard deviation of the candidate
    residuals, floored away from zero."""
    spread = np.std(np.asarray(residuals, dtype=np.float64), axis=-1)
    return np.maximum(spread, SIGMA_R_FLOOR)


def _batch_probabilities(
    residuals: np.ndarray, patch_size: int
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized candidate softmax for an (n, m) residual matrix.

    Returns (probabilities (n, m), sigma_r (n,)).
    """
    sigma = residual_spread(residuals)
    denom = 2.0 * sigma * sigma * patch_size * patch_size
    exponents = residuals / denom[:, None]
    shifted = exponents - exponents.min(axis=1, keepdims=True)
    weights = np.exp(-shifted)
    return weights / weights.sum(axis=1, keepdims=True), sigma


def _patch_origin(
    center: tuple[float, float], patch_size: int
) -> tuple[int, int]:
    half = (patch_size - 1) / 2.0
    return int(round(center[1] - half)), int(round(center[0] - half))


def inverse_search_patch(
    left: np.ndarray,
    right: np.ndarray,
    center: tuple[float, float],
    init_disparity: float,
    config: MatcherConfig | None = None,
) -> PatchEstimate:
    """Run the full single-patch pipeline at one location.

    The patch is anchored so its geometric center lands on ``center`` (x, y),
    rounded to integer origins. Raises ValueError when the patch overlaps the
    left image by less than the configured valid-pixel ratio.
    """
    config = config or MatcherConfig()
    left = np.ascontiguousarray(left, dtype=np.float32)
    right = np.ascontiguousarray(right, dtype=np.float32)
    h, w = left.shape
    oy, ox = _patch_origin(center, config.patch_size)
    overlap_y = min(oy + config.patch_size, h) - max(oy, 0)
    overlap_x = min(ox + config.patch_size, w) - max(ox, 0)
    overlap = max(overlap_y, 0) * max(overlap_x, 0) / config.patch_size**2
    if overlap < config.min_valid_patch_ratio:
        raise ValueError(
            f"patch at center {center} overlaps the left image by "
            f"{overlap:.2f}, below the minimum {config.min_valid_patch_ratio}"
        )
    origin_y = np.asarray([oy], dtype=np.int64)
    origin_x = np.asarray([ox], dtype=np.int64)
    init = np.asarray([init_disparity], dtype=np.float64)
    max_disp = config.resolved_max_disparity(w)
    disp, probability, sigma, resid, cover, valid, degen = _score_level(
        left, right, origin_y, origin_x, init, config, max_disp
    )
    half = (config.patch_size - 1) / 2.0
    return PatchEstimate(
        center=(ox + half, oy + half),
        disparity=float(disp[0]),
        probability=float(probability[0]),
        residual=float(resid[0]),
        sigma_r=float(sigma[0]),
        coverage=float(cover[0]),
        valid=bool(valid[0]),
        degenerate=bool(degen[0]),
    )


def scrf_probability(
    left: np.ndarray,
    right: np.ndarray,
    center: tuple[float, float],
    converged_disparity: float,
    config: MatcherConfig | None = None,
) -> tuple[float, float]:
    """Confidence of a converged patch disparity against its disturbances.

    Evaluates the patch SSD at the converged disparity plus each candidate
    offset, derives sigma_r as the residual spread, and returns the softmax
    probability of the undisturbed candidate together with sigma_r. Raises
    ValueError when every candidate samples entirely outside the right image.
    """
    config = config or MatcherConfig()
    left = np.ascontiguousarray(left, dtype=np.float32)
    right = np.ascontiguousarray(right, dtype=np.float32)
    oy, ox = _patch_origin(center, config.patch_size)
    origin_y = np.asarray([oy], dtype=np.int64)
    origin_x = np.asarray([ox], dtype=np.int64)
    disp = np.asarray([converged_disparity], dtype=np.float64)
    offsets = np.asarray(config.candidate_offsets, dtype=np.float64)
    res, n_in = _kernels.candidate_residuals(
        left, right, origin_y, origin_x, disp, offsets, config.patch_size
    )
    if n_in.max() == 0:
        raise ValueError(
            f"patch at center {center}, disparity {converged_disparity}: "
            "every candidate samples outside the right image"
        )
    sigma = float(residual_spread(res[0]))
    probs = candidate_probabilities(res[0], sigma, config.patch_size)
    return float(probs[0]), sigma


def accumulate_patch(
    accumulators: FieldAccumulators,
    estimate: PatchEstimate,
    kernel: KernelTable,
) -> None:
    """Scatter one valid patch estimate into the fusion buffers.

    Every covered pixel gains weight probability * kernel(offset) on its
    weight sum and weight * disparity on its weighted sum; the pixel's peak
    probability is raised when this patch beats it. Out-of-image pixels are
    skipped; zero-probability patches leave the buffers untouched.
    """
    oy, ox = _patch_origin(estimate.center, kernel.patch_size)
    _kernels.accumulate_weighted(
        np.asarray([oy], dtype=np.int64),
        np.asarray([ox], dtype=np.int64),
        np.asarray([estimate.disparity], dtype=np.float64),
        np.asarray([estimate.probability], dtype=np.float64),
        kernel.weights,
        accumulators.weighted_sum,
        accumulators.weight_sum,
        accumulators.peak_probability,
    )


def finalize_field(
    accumulators: FieldAccumulators, config: MatcherConfig
) -> DisparityField:
    """Fold the fusion buffers into the output field.

    disparity = weighted sum / weight sum where any weight accumulated;
    confidence = peak contributing patch probability; a pixel is valid when
    its confidence reaches the probability threshold, it was covered, and
    the fused disparity lies in [0, max_disparity]. Invalid pixels carry
    disparity 0.
    """
    num = accumulators.weighted_sum
    den = accumulators.weight_sum
    conf = accumulators.peak_probability
    max_disparity = config.resolved_max_disparity(accumulators.width)
    covered = den > 0.0
    fused = np.where(covered, num / np.where(covered, den, 1.0), 0.0)
    valid = (
        (conf >= config.probability_threshold)
        & covered
        & (fused >= 0.0)
        & (fused <= max_disparity)
    )
    disparity = np.where(valid, fused, 0.0)
    return DisparityField(
        disparity=disparity.astype(np.float32),
        confidence=conf.astype(np.float32),
        valid_mask=valid,
    )


def _score_level(
    left: np.ndarray,
    right: np.ndarray,
    origin_y: np.ndarray,
    origin_x: np.ndarray,
    init_disp: np.ndarray,
    config: MatcherConfig,
    max_disparity: float,
) -> tuple[np.ndarray, ...]:
    """Search + score one pyramid level's patch batch.

    Returns (disparity, probability, sigma_r, residual, coverage, valid,
    degenerate); probability is zeroed for invalid patches so they are
    no-ops during accumulation.
    """
    disp, resid, cover, status = _kernels.search_patches(
        left,
        right,
        origin_y,
        origin_x,
        init_disp,
        config.patch_size,
        config.max_iterations,
        config.convergence_tol,
        HESSIAN_FLOOR,
        max_disparity,
    )
    offsets = np.asarray(config.candidate_offsets, dtype=np.float64)
    cand_res, cand_in = _kernels.candidate_residuals(
        left, right, origin_y, origin_x, disp, offsets, config.patch_size
    )
    probs, sigma = _batch_probabilities(cand_res, config.patch_size)

    degenerate = status == _kernels.STATUS_DEGENERATE
    in_range = (status == _kernels.STATUS_OK) & (disp >= 0.0) & (disp <= max_disparity)
    sampled = cand_in.max(axis=1) > 0
    valid = (
        in_range
        & ~degenerate
        & sampled
        & (cover >= config.min_valid_patch_ratio)
    )
    probability = np.where(valid, probs[:, 0], 0.0)
    return disp, probability, sigma, resid, cover, valid, degenerate


def _seed_initial_disparity(
    origin_y: np.ndarray,
    origin_x: np.ndarray,
    patch_size: int,
    coarse: FieldAccumulators | None,
) -> np.ndarray:
    """Initial disparities for a level from the coarser level's fused field.

    Each patch center maps to the nearest coarse pixel; a fused value there
    (positive accumulated weight) seeds twice the coarse disparity, else 0.
    """
    n = origin_y.shape[0]
    if coarse is None:
        return np.zeros(n, dtype=np.float64)
    half = (patch_size - 1) / 2.0
    ch, cw = coarse.weight_sum.shape
    cy = np.clip(np.rint((origin_y + half) / 2.0).astype(np.int64), 0, ch - 1)
    cx = np.clip(np.rint((origin_x + half) / 2.0).astype(np.int64), 0, cw - 1)
    den = coarse.weight_sum[cy, cx]
    init = np.zeros(n, dtype=np.float64)
    seeded = den > 0.0
    init[seeded] = 2.0 * coarse.weighted_sum[cy[seeded], cx[seeded]] / den[seeded]
    return init


def match(
    pair: RectifiedStereoPair,
    config: MatcherConfig | None = None,
    collect_patches: bool = False,
) -> DisparityField | tuple[DisparityField, list[PatchEstimate]]:
    """Dense disparity for a rectified pair.

    Runs the patch search coarse-to-fine, seeding each level's patches from
    the previous fused field upsampled by two, and thresholds the finest
    fusion into a DisparityField. With collect_patches=True also returns the
    finest-level patch estimates (diagnostics and tests).
    """
    config = config or MatcherConfig()
    levels = build_pyramid(pair, config)
    max_disp_fine = config.resolved_max_disparity(pair.width)
    kernel = KernelTable.build(config.patch_size, config.sigma_s)

    coarse: FieldAccumulators | None = None
    accumulators: FieldAccumulators | None = None
    finest_estimates: list[PatchEstimate] | None = None
    for index, level_pair in enumerate(levels):
        level = len(levels) - 1 - index
        left, right = level_pair.left, level_pair.right
        h, w = left.shape
        max_disp = max_disp_fine / 2.0**level
        origin_y, origin_x = patch_grid(h, w, config.patch_size, config.stride)
        init = _seed_initial_disparity(
            origin_y, origin_x, config.patch_size, coarse
        )
        disp, probability, sigma, resid, cover, valid, degen = _score_level(
            left, right, origin_y, origin_x, init, config, max_disp
        )
        accumulators = FieldAccumulators.zeros(h, w)
        _kernels.accumulate_weighted(
            origin_y,
            origin_x,
            disp,
            probability,
            kernel.weights,
            accumulators.weighted_sum,
            accumulators.weight_sum,
            accumulators.peak_probability,
        )
        coarse = accumulators
        if collect_patches and level == 0:
            half = (config.patch_size - 1) / 2.0
            finest_estimates = [
                PatchEstimate(
                    center=(float(origin_x[k] + half), float(origin_y[k] + half)),
                    disparity=float(disp[k]),
                    probability=float(probability[k]),
                    residual=float(resid[k]),
                    sigma_r=float(sigma[k]),
                    coverage=float(cover[k]),
                    valid=bool(valid[k]),
                    degenerate=bool(degen[k]),
                )
                for k in range(origin_y.shape[0])
            ]
        logger.debug(
            "level %d (%dx%d): %d/%d patches valid",
            level, w, h, int(valid.sum()), valid.size,
        )

    field = finalize_field(accumulators, config)
    if collect_patches:
        return field, finest_estimates or []
    return field
