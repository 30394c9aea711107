from __future__ import annotations

import numpy as np

from ..core.rng import stream_seed

GAIT_SIZE = 64


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix averaging input cells over each output cell."""
    edges_out = np.arange(n_out + 1) * (n_in / n_out)
    lo = np.maximum(edges_out[:-1, None], np.arange(n_in)[None, :])
    hi = np.minimum(edges_out[1:, None], np.arange(n_in)[None, :] + 1)
    return np.clip(hi - lo, 0.0, None) * (n_out / n_in)


def area_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Area-average resampling of a 2-D grid; exact identity at equal size."""
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.astype(np.float64, copy=True)
    return _area_matrix(h, out_h) @ img.astype(np.float64) @ _area_matrix(w, out_w).T


def preprocess_mask(mask: np.ndarray, size: int = GAIT_SIZE) -> np.ndarray:
    """Resize a person mask to ``size`` rows keeping its aspect ratio, then
    zero-pad the columns symmetrically to a ``size`` x ``size`` silhouette.

    A mask wider than tall is fitted by width and padded vertically instead.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    h, w = mask.shape
    if h == 0 or w == 0:
        raise ValueError(f"degenerate mask of shape {mask.shape}")
    m = np.clip(mask.astype(np.float64), 0.0, 1.0)
    out = np.zeros((size, size), dtype=np.float32)
    if w <= h:
        new_w = max(1, min(size, int(round(w * size / h))))
        left = (size - new_w) // 2
        out[:, left:left + new_w] = area_resize(m, size, new_w)
    else:
        new_h = max(1, min(size, int(round(h * size / w))))
        top = (size - new_h) // 2
        out[top:top + new_h, :] = area_resize(m, new_h, size)
    return np.clip(out, 0.0, 1.0)


def preprocess_masks(masks: np.ndarray, size: int = GAIT_SIZE) -> np.ndarray:
    return np.stack([preprocess_mask(m, size) for m in masks]) if len(masks) else \
        np.zeros((0, size, size), dtype=np.float32)


def _rgb_to_gray(rgb: np.ndarray) -> np.ndarray:
    return 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]


def body_color_jitter(rgb: np.ndarray, mask: np.ndarray, strength: float, seed: int) -> np.ndarray:
    """Randomly change brightness, contrast and saturation inside the body.

    Factors are drawn from [1 - strength, 1 + strength]; pixels with
    ``mask <= 0.5`` are returned untouched and the result is clipped to [0, 1].
    """
    if not 0.0 <= strength <= 1.0:
        raise ValueError("strength must be in [0, 1]")
    rgb = np.asarray(rgb, dtype=np.float32)
    if strength == 0.0:
        return rgb.copy()
    body = np.asarray(mask) > 0.5
    g = np.random.default_rng(stream_seed(seed, "color-jitter"))
    bright, contrast, sat = g.uniform(1.0 - strength, 1.0 + strength, 3)

    x = rgb.astype(np.float64) * bright
    mean_gray = _rgb_to_gray(x)[body].mean() if body.any() else 0.0
    x = (x - mean_gray) * contrast + mean_gray
    gray = _rgb_to_gray(x)[None]
    x = (x - gray) * sat + gray
    x = np.clip(x, 0.0, 1.0)
    return np.where(body[None], x, rgb).astype(np.float32)
