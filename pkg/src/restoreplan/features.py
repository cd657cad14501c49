"""Image statistics for policy conditioning and quality scoring.

All statistics are written against batches shaped ``(N, H, W, C)`` in
float64 and reduce each image independently (row-wise over a flattened
view), so a statistic computed for one image alone is bit-identical to the
same image inside a larger batch.

Feature normalizers (fixed, not learned)::

    index  feature               raw statistic                       scale
    0      mean_luminance        mean(Y)                             1.0
    1      luminance_std         std(Y)                              0.5
    2      sharpness             sqrt(mean(lap(Y)^2))                4.0
    3      dark_channel          mean(minfilter7(min_c I))           1.0
    4      saturation            mean((max_c - min_c) / max_c)       1.0
    5      noise                 Immerkaer sigma estimate            0.1
    6      streak                mean(max(|dY/dx| - |dY/dy|, 0))      0.1
    7      blockiness            boundary - interior step, 4px grid  0.1

A normalized feature is ``clip(raw / scale, 0, 1)``. The sharpness scale is
the largest value the 4-neighbour Laplacian can reach on unit-range data
(a 0/1 checkerboard), so that pattern saturates to exactly 1.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .imaging import ImageGrid

FEATURE_NAMES = (
    "mean_luminance",
    "luminance_std",
    "sharpness",
    "dark_channel",
    "saturation",
    "noise",
    "streak",
    "blockiness",
)
FEATURE_SCALES = np.array([1.0, 0.5, 4.0, 1.0, 1.0, 0.1, 0.1, 0.1])
N_FEATURES = len(FEATURE_NAMES)

DARK_CHANNEL_WINDOW = 7
BLOCK_GRID = 4

_LUMA = np.array([0.299, 0.587, 0.114])
_IMMERKAER = np.array([[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]])


def as_batch(img) -> np.ndarray:
    if isinstance(img, ImageGrid):
        return img.as_float64()[None]
    a = np.asarray(img, dtype=np.float64)
    return a[None] if a.ndim == 3 else a


def _rowmean(x: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[0], -1).mean(axis=1)


def luminance(batch: np.ndarray) -> np.ndarray:
    if batch.shape[-1] == 1:
        return batch[..., 0]
    # elementwise, so results do not depend on batch size
    return _LUMA[0] * batch[..., 0] + _LUMA[1] * batch[..., 1] + _LUMA[2] * batch[..., 2]


def _pad_mirror(y: np.ndarray) -> np.ndarray:
    mode = "reflect" if min(y.shape[1], y.shape[2]) > 1 else "edge"
    return np.pad(y, ((0, 0), (1, 1), (1, 1)), mode=mode)


def laplacian(y: np.ndarray) -> np.ndarray:
    p = _pad_mirror(y)
    return 4.0 * y - p[:, :-2, 1:-1] - p[:, 2:, 1:-1] - p[:, 1:-1, :-2] - p[:, 1:-1, 2:]


def immerkaer_response(y: np.ndarray) -> np.ndarray:
    """3x3 Immerkaer mask, applied as its separable factors [1,-2,1] x [1,-2,1]."""
    p = _pad_mirror(y)
    dx = p[:, :, :-2] - 2.0 * p[:, :, 1:-1] + p[:, :, 2:]
    return dx[:, :-2] - 2.0 * dx[:, 1:-1] + dx[:, 2:]


def sobel_energy(y: np.ndarray) -> np.ndarray:
    """Squared Sobel gradient magnitude with edge-replicated borders."""
    p = np.pad(y, ((0, 0), (1, 1), (1, 1)), mode="edge")
    dx = p[:, :, 2:] - p[:, :, :-2]
    gx = dx[:, :-2] + 2.0 * dx[:, 1:-1] + dx[:, 2:]
    dy = p[:, 2:, :] - p[:, :-2, :]
    gy = dy[:, :, :-2] + 2.0 * dy[:, :, 1:-1] + dy[:, :, 2:]
    return gx * gx + gy * gy


def channel_min(batch: np.ndarray) -> np.ndarray:
    m = batch[..., 0]
    for c in range(1, batch.shape[-1]):
        m = np.minimum(m, batch[..., c])
    return m


def laplacian_energy(batch: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    lap = laplacian(luminance(batch) if y is None else y)
    return _rowmean(lap * lap)


def luminance_std(batch: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    y = luminance(batch) if y is None else y
    flat = y.reshape(y.shape[0], -1)
    return flat.std(axis=1)


def dark_channel_mean(batch: np.ndarray) -> np.ndarray:
    m = channel_min(batch)
    k = DARK_CHANNEL_WINDOW
    dc = ndimage.minimum_filter(m, size=(1, k, k), mode="nearest")
    return _rowmean(dc)


def saturation_mean(batch: np.ndarray) -> np.ndarray:
    if batch.shape[-1] == 1:
        return np.zeros(batch.shape[0])
    mx = np.maximum(np.maximum(batch[..., 0], batch[..., 1]), batch[..., 2])
    mn = channel_min(batch)
    sat = np.where(mx > 0, (mx - mn) / np.where(mx > 0, mx, 1.0), 0.0)
    return _rowmean(sat)


def noise_sigma(batch: np.ndarray) -> np.ndarray:
    r = immerkaer_response(luminance(batch))
    return math.sqrt(math.pi / 2.0) * _rowmean(np.abs(r)) / 6.0


def flat_region_hf_energy(batch: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    """Mean squared high-pass response over the flatter half of each image."""
    y = luminance(batch) if y is None else y
    r = immerkaer_response(y)
    g = sobel_energy(y).reshape(y.shape[0], -1)
    r2 = (r * r).reshape(y.shape[0], -1)
    thresh = np.median(g, axis=1, keepdims=True)
    mask = g <= thresh
    return (r2 * mask).sum(axis=1) / mask.sum(axis=1)


def streak_energy(batch: np.ndarray) -> np.ndarray:
    y = luminance(batch)
    if y.shape[1] < 2 or y.shape[2] < 2:
        return np.zeros(y.shape[0])
    gx = np.abs(np.diff(y, axis=2))[:, :-1, :]
    gy = np.abs(np.diff(y, axis=1))[:, :, :-1]
    return _rowmean(np.maximum(gx - gy, 0.0))


def blockiness(batch: np.ndarray) -> np.ndarray:
    y = luminance(batch)
    n = y.shape[0]
    parts = []
    for axis in (1, 2):
        if y.shape[axis] <= BLOCK_GRID:
            continue
        d = np.abs(np.diff(y, axis=axis))
        idx = np.arange(d.shape[axis])
        boundary = (idx + 1) % BLOCK_GRID == 0
        shape = [1, 1, 1]
        shape[axis] = -1
        bmask = np.broadcast_to(boundary.reshape(shape), d.shape).reshape(n, -1)
        flat = d.reshape(n, -1)
        b = (flat * bmask).sum(axis=1) / bmask.sum(axis=1)
        inner = (flat * ~bmask).sum(axis=1) / (~bmask).sum(axis=1)
        parts.append(b - inner)
    if not parts:
        return np.zeros(n)
    return np.maximum(np.mean(parts, axis=0), 0.0)


def raw_feature_batch(batch: np.ndarray) -> np.ndarray:
    y = luminance(batch)
    flat = y.reshape(y.shape[0], -1)
    return np.stack(
        [
            flat.mean(axis=1),
            flat.std(axis=1),
            np.sqrt(laplacian_energy(batch, y)),
            dark_channel_mean(batch),
            saturation_mean(batch),
            noise_sigma(batch),
            streak_energy(batch),
            blockiness(batch),
        ],
        axis=1,
    )


def feature_batch(batch: np.ndarray) -> np.ndarray:
    return np.clip(raw_feature_batch(batch) / FEATURE_SCALES, 0.0, 1.0)


def extract_features(img: ImageGrid) -> np.ndarray:
    """Normalized 8-vector describing ``img``; see the module table."""
    return feature_batch(as_batch(img))[0]
