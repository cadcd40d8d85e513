"""JIT-compiled inner loops for patch search, candidate scoring and fusion.

Rectified geometry keeps the vertical coordinate integral, so all sub-pixel
sampling is 1-D linear interpolation along image rows with border clamping.
Batch loops run sequentially in patch index order; outputs depend only on the
inputs, never on scheduling.
"""

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_DEGENERATE = 1
STATUS_OUT_OF_RANGE = 2


@njit(cache=True, inline="always")
def _sample_row(img, y, x):
    w = img.shape[1]
    if x <= 0.0:
        return img[y, 0]
    if x >= w - 1:
        return img[y, w - 1]
    x0 = int(x)
    t = x - x0
    return (1.0 - t) * img[y, x0] + t * img[y, x0 + 1]


@njit(cache=True, inline="always")
def _clamp_index(i, n):
    if i < 0:
        return 0
    if i > n - 1:
        return n - 1
    return i


@njit(cache=True)
def search_patches(left, right, origin_y, origin_x, init_disp, patch,
                   max_iter, tol, hessian_floor, max_disparity):
    """Inverse-compositional horizontal search for a batch of patches.

    The template gradient and scalar Hessian come from the left patch once;
    each iteration samples the right patch at the current disparity and solves
    the 1-D update. Returns per-patch arrays:

        disparity, residual (mean squared over in-bound pixels),
        coverage (fraction of pixels sampling inside both images),
        status (0 ok, 1 degenerate template, 2 disparity left the
        [-1, max_disparity + 1] band).
    """
    n = origin_y.shape[0]
    h, w = left.shape
    disparity = np.empty(n, np.float64)
    residual = np.empty(n, np.float64)
    coverage = np.empty(n, np.float64)
    status = np.empty(n, np.int8)
    gx = np.empty((patch, patch), np.float64)

    for k in range(n):
        y0 = origin_y[k]
        x0 = origin_x[k]

        hessian = 0.0
        for i in range(patch):
            yy = y0 + i
            in_row = 0 <= yy < h
            yc = _clamp_index(yy, h)
            for j in range(patch):
                xx = x0 + j
                if in_row and 0 <= xx < w:
                    xm = _clamp_index(xx - 1, w)
                    xp = _clamp_index(xx + 1, w)
                    g = 0.5 * (left[yc, xp] - left[yc, xm])
                else:
                    g = 0.0
                gx[i, j] = g
                hessian += g * g

        d = float(init_disp[k])
        if hessian < hessian_floor:
            disparity[k] = d
            residual[k] = 0.0
            coverage[k] = 0.0
            status[k] = STATUS_DEGENERATE
            continue

        st = STATUS_OK
        for _ in range(max_iter):
            b = 0.0
            for i in range(patch):
                yy = _clamp_index(y0 + i, h)
                for j in range(patch):
                    g = gx[i, j]
                    if g == 0.0:
                        continue
                    xx = x0 + j
                    err = _sample_row(right, yy, xx - d) - left[yy, xx]
                    b += g * err
            step = b / hessian
            d += step
            if d < -1.0 or d > max_disparity + 1.0:
                st = STATUS_OUT_OF_RANGE
                break
            if abs(step) < tol:
                break

        n_in = 0
        sum_sq = 0.0
        for i in range(patch):
            yy = y0 + i
            if yy < 0 or yy >= h:
                continue
            for j in range(patch):
                xx = x0 + j
                if xx < 0 or xx >= w:
                    continue
                xs = xx - d
                if 0.0 <= xs <= w - 1:
                    err = _sample_row(right, yy, xs) - left[yy, xx]
                    sum_sq += err * err
                    n_in += 1
        disparity[k] = d
        coverage[k] = n_in / (patch * patch)
        residual[k] = sum_sq / n_in if n_in > 0 else np.inf
        status[k] = st
    return disparity, residual, coverage, status


@njit(cache=True)
def candidate_residuals(left, right, origin_y, origin_x, disparity, offsets, patch):
    """Full-patch SSD at each disturbed disparity, with border-clamped sampling.

    Returns (residuals, in_bounds_counts), both (n_patches, n_offsets). A zero
    count means that candidate sampled entirely outside the right image.
    """
    n = origin_y.shape[0]
    m = offsets.shape[0]
    h, w = left.shape
    res = np.empty((n, m), np.float64)
    n_in = np.empty((n, m), np.int32)
    for k in range(n):
        y0 = origin_y[k]
        x0 = origin_x[k]
        for c in range(m):
            d = disparity[k] + offsets[c]
            ss = 0.0
            cnt = 0
            for i in range(patch):
                yy = y0 + i
                if yy < 0 or yy >= h:
                    continue
                for j in range(patch):
                    xx = x0 + j
                    if xx < 0 or xx >= w:
                        continue
                    xs = xx - d
                    err = _sample_row(right, yy, xs) - left[yy, xx]
                    ss += err * err
                    if 0.0 <= xs <= w - 1:
                        cnt += 1
            res[k, c] = ss
            n_in[k, c] = cnt
    return res, n_in


@njit(cache=True)
def accumulate_weighted(origin_y, origin_x, disparity, probability, kernel,
                        num, den, conf):
    """Scatter patch disparities into per-pixel fusion buffers, in index order.

    num/den collect the weighted-disparity and weight sums; conf keeps the
    maximum single-patch probability seen at each pixel. Zero-probability
    patches are no-ops; pixels outside the image are skipped.
    """
    n = origin_y.shape[0]
    patch = kernel.shape[0]
    h, w = num.shape
    for k in range(n):
        p = probability[k]
        if p <= 0.0:
            continue
        d = disparity[k]
        y0 = origin_y[k]
        x0 = origin_x[k]
        for i in range(patch):
            yy = y0 + i
            if yy < 0 or yy >= h:
                continue
            for j in range(patch):
                xx = x0 + j
                if xx < 0 or xx >= w:
                    continue
                wgt = p * kernel[i, j]
                num[yy, xx] += wgt * d
                den[yy, xx] += wgt
                if p > conf[yy, xx]:
                    conf[yy, xx] = p
