"""Capsule rasteriser.

A primitive row is ``(x0, y0, x1, y1, radius, label)``: the set of points
within ``radius`` of the segment (x0,y0)-(x1,y1). A circle is a zero-length
segment. Pixel (i, j) is sampled at its centre (j + 0.5, i + 0.5); later rows
overwrite earlier ones, so row order is paint order. No anti-aliasing, so the
numba and numpy paths agree bit for bit.
"""

from __future__ import annotations

import numpy as np

from .._accel import njit, use_numba


@njit
def _raster_nb(height, width, prims):
    out = np.zeros((height, width), dtype=np.uint8)
    n = prims.shape[0]
    for i in range(height):
        y = i + 0.5
        for j in range(width):
            x = j + 0.5
            lab = 0
            for k in range(n):
                x0 = prims[k, 0]
                y0 = prims[k, 1]
                vx = prims[k, 2] - x0
                vy = prims[k, 3] - y0
                r = prims[k, 4]
                l2 = vx * vx + vy * vy
                t = 0.0
                if l2 > 0.0:
                    t = ((x - x0) * vx + (y - y0) * vy) / l2
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                dx = x0 + t * vx - x
                dy = y0 + t * vy - y
                if dx * dx + dy * dy <= r * r:
                    lab = np.uint8(prims[k, 5])
            out[i, j] = lab
    return out


def _capsule_mask_np(height: int, width: int, prim: np.ndarray) -> np.ndarray:
    y = (np.arange(height, dtype=np.float64) + 0.5)[:, None]
    x = (np.arange(width, dtype=np.float64) + 0.5)[None, :]
    x0, y0, x1, y1, r = (float(v) for v in prim[:5])
    vx, vy = x1 - x0, y1 - y0
    l2 = vx * vx + vy * vy
    if l2 > 0.0:
        t = np.clip(((x - x0) * vx + (y - y0) * vy) / l2, 0.0, 1.0)
    else:
        t = np.zeros((height, width))
    dx = x0 + t * vx - x
    dy = y0 + t * vy - y
    return dx * dx + dy * dy <= r * r


def _raster_np(height: int, width: int, prims: np.ndarray) -> np.ndarray:
    out = np.zeros((height, width), dtype=np.uint8)
    for prim in prims:
        out[_capsule_mask_np(height, width, prim)] = np.uint8(prim[5])
    return out


def rasterize(height: int, width: int, prims: np.ndarray) -> np.ndarray:
    """Label map (uint8, 0 = background) of the painted primitives."""
    prims = np.ascontiguousarray(prims, dtype=np.float64).reshape(-1, 6)
    if use_numba():
        return _raster_nb(int(height), int(width), prims)
    return _raster_np(int(height), int(width), prims)


def primitive_masks(height: int, width: int, prims: np.ndarray) -> np.ndarray:
    """Unoccluded boolean mask of each primitive, shape (n, height, width)."""
    prims = np.asarray(prims, dtype=np.float64).reshape(-1, 6)
    return np.stack([_capsule_mask_np(height, width, p) for p in prims]) if len(prims) else \
        np.zeros((0, height, width), dtype=bool)
