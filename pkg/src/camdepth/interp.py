"""Separable bilinear resampling shared by calibration maps, the decoder and
the dataset-view pipeline.

Two source-position grids exist on purpose:
  * "endpoints": corner-aligned, t -> t * (src-1) / (dst-1). Endpoints map to
    endpoints, so affine maps stay affine. Used for calibration-map and
    feature resampling.
  * "scale": t -> t / r, the grid implied by scaling intrinsics by r
    (cx' = cx * r). Used when resampling rendered images so that pixel rays
    keep matching the transformed intrinsics. Clamped at the last source index.

A single-pixel target axis samples the source center under "endpoints" and
source position 0 under "scale" (0 / r).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def line_positions(src: int, dst: int, mode: str, r: float | None = None) -> np.ndarray:
    """Continuous source positions for each of `dst` target indices along one axis."""
    t = np.arange(dst, dtype=np.float64)
    if mode == "endpoints":
        if dst == 1:
            return np.full(1, (src - 1) / 2.0)
        return t * ((src - 1) / (dst - 1))
    if mode == "scale":
        if r is None or r <= 0:
            raise ValueError("scale mode needs a positive factor r")
        return np.minimum(t / r, float(src - 1))
    raise ValueError(f"unknown sampling mode {mode!r}")


def line_support(positions: np.ndarray, src: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-target (lower index, upper index, upper weight) for linear interpolation."""
    i0 = np.floor(positions).astype(np.int64)
    i0 = np.clip(i0, 0, src - 1)
    a = positions - i0
    i1 = np.minimum(i0 + 1, src - 1)
    return i0, i1, a


@lru_cache(maxsize=256)
def _matrix_cached(src: int, dst: int, mode: str, r: float | None) -> np.ndarray:
    pos = line_positions(src, dst, mode, r)
    i0, i1, a = line_support(pos, src)
    m = np.zeros((dst, src), dtype=np.float64)
    rows = np.arange(dst)
    np.add.at(m, (rows, i0), 1.0 - a)
    np.add.at(m, (rows, i1), a)
    return m


def bilinear_matrix(src: int, dst: int, mode: str = "endpoints", r: float | None = None) -> np.ndarray:
    """Dense (dst, src) interpolation matrix for one axis. Cached; do not mutate."""
    return _matrix_cached(int(src), int(dst), mode, None if r is None else float(r))


def resample_bilinear(img: np.ndarray, out_h: int, out_w: int, mode: str = "endpoints",
                      rx: float | None = None, ry: float | None = None) -> np.ndarray:
    """Resample an (h, w) or (h, w, c) array to (out_h, out_w).

    `rx`/`ry` are only consulted in "scale" mode.
    """
    if img.ndim not in (2, 3):
        raise ValueError(f"expected (h, w) or (h, w, c) array, got shape {img.shape}")
    h, w = img.shape[:2]
    rowm = bilinear_matrix(h, out_h, mode, ry)
    colm = bilinear_matrix(w, out_w, mode, rx)
    out = np.tensordot(rowm, img, axes=(1, 0))          # (out_h, w[, c])
    out = np.moveaxis(np.tensordot(colm, out, axes=(1, 1)), 0, 1)  # (out_h, out_w[, c])
    return out.astype(img.dtype, copy=False)
