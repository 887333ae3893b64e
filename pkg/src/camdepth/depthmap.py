"""Depth-map containers and the geometry derived from them.

Depth is the camera-frame Z coordinate in meters. Inverse depth xi = 1/d can
be either metric or normalized to a reference focal f_n; the container carries
that state in `focal_normalized_to` so the two can never be mixed silently.
Normalized inverse depth follows xi_normalized = (f / f_n) * xi, so
denormalization multiplies by f_n / f.

Masked pixels are carried through conversions untouched and stay masked.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .camera import CameraIntrinsics, FocalNormalization, backproject

DEPTH_MIN = 0.1
DEPTH_MAX = 100.0


def valid_depth_mask(values: np.ndarray, d_min: float = DEPTH_MIN, d_max: float = DEPTH_MAX) -> np.ndarray:
    return np.isfinite(values) & (values >= d_min) & (values <= d_max)


def _check_grid(values: np.ndarray, mask: np.ndarray, cam: CameraIntrinsics, kind: str) -> None:
    if values.shape[:2] != (cam.h, cam.w):
        raise ValueError(f"{kind} shape {values.shape} does not match sensor {cam.w}x{cam.h}")
    if mask.shape != values.shape[:2] or mask.dtype != bool:
        raise ValueError(f"mask must be bool of shape {values.shape[:2]}, got {mask.dtype} {mask.shape}")


@dataclass(frozen=True)
class DepthMap:
    """Metric Z-depth, (h, w) floats plus validity mask."""

    values: np.ndarray
    mask: np.ndarray
    cam: CameraIntrinsics

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError(f"depth values must be (h, w), got {self.values.shape}")
        _check_grid(self.values, self.mask, self.cam, "depth")


@dataclass(frozen=True)
class InverseDepthMap:
    """Inverse depth, metric (focal_normalized_to is None) or focal-normalized."""

    values: np.ndarray
    mask: np.ndarray
    cam: CameraIntrinsics
    focal_normalized_to: float | None = None

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError(f"inverse depth values must be (h, w), got {self.values.shape}")
        _check_grid(self.values, self.mask, self.cam, "inverse depth")


@dataclass(frozen=True)
class NormalMap:
    """Unit surface normals in the camera frame, (h, w, 3), n_z < 0 where valid."""

    values: np.ndarray
    mask: np.ndarray
    cam: CameraIntrinsics

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise ValueError(f"normals must be (h, w, 3), got {self.values.shape}")
        _check_grid(self.values, self.mask, self.cam, "normals")


def make_depth_map(values: np.ndarray, cam: CameraIntrinsics, mask: np.ndarray | None = None,
                   d_min: float = DEPTH_MIN, d_max: float = DEPTH_MAX) -> DepthMap:
    values = np.asarray(values, dtype=np.float64)
    if mask is None:
        mask = valid_depth_mask(values, d_min, d_max)
    return DepthMap(values=values, mask=mask, cam=cam)


def to_inverse(d: DepthMap) -> InverseDepthMap:
    if np.any(d.values[d.mask] <= 0):
        raise ValueError("depth must be strictly positive inside the mask")
    safe = np.where(d.mask, d.values, 1.0)
    values = np.where(d.mask, 1.0 / safe, d.values)
    return InverseDepthMap(values=values, mask=d.mask.copy(), cam=d.cam, focal_normalized_to=None)


def to_depth(xi: InverseDepthMap) -> DepthMap:
    if xi.focal_normalized_to is not None:
        raise ValueError("inverse depth is focal-normalized; denormalize before converting to depth")
    if np.any(xi.values[xi.mask] <= 0):
        raise ValueError("inverse depth must be strictly positive inside the mask")
    safe = np.where(xi.mask, xi.values, 1.0)
    values = np.where(xi.mask, 1.0 / safe, xi.values)
    return DepthMap(values=values, mask=xi.mask.copy(), cam=xi.cam)


def normalize_inverse_depth(xi: InverseDepthMap, norm: FocalNormalization) -> InverseDepthMap:
    """Metric xi to the f_n-normalized representation: values * (f / f_n)."""
    if xi.focal_normalized_to is not None:
        raise ValueError(f"inverse depth is already normalized to f_n={xi.focal_normalized_to}")
    scale = xi.cam.f / norm.f_n
    return replace(xi, values=xi.values * scale, focal_normalized_to=norm.f_n)


def denormalize_inverse_depth(xi: InverseDepthMap) -> InverseDepthMap:
    """Back to metric inverse depth by dividing out the same f / f_n factor."""
    if xi.focal_normalized_to is None:
        raise ValueError("inverse depth is already metric")
    scale = xi.cam.f / xi.focal_normalized_to
    return replace(xi, values=xi.values / scale, focal_normalized_to=None)


def confidence_target(xi_pred: np.ndarray, xi_gt: np.ndarray) -> np.ndarray:
    """exp(-|pred - gt|), elementwise; plain arrays, so inherently stop-gradient."""
    if xi_pred.shape != xi_gt.shape:
        raise ValueError(f"shape mismatch {xi_pred.shape} vs {xi_gt.shape}")
    return np.exp(-np.abs(xi_pred - xi_gt))


def normals_from_depth(d: DepthMap) -> NormalMap:
    """Surface normals from central differences of backprojected points.

    A pixel gets a normal only when it and its four axis neighbors are valid;
    the normal is normalize(t_x cross t_y) with the sign fixed camera-facing
    (n_z < 0). Borders and degenerate (zero-length) crosses are masked.
    """
    h, w = d.values.shape
    u = np.arange(w, dtype=np.float64)[None, :].repeat(h, axis=0)
    v = np.arange(h, dtype=np.float64)[:, None].repeat(w, axis=1)
    x, y, z = backproject(d.cam, u, v, d.values.astype(np.float64))
    p = np.stack([x, y, z], axis=-1)

    values = np.zeros((h, w, 3))
    mask = np.zeros((h, w), dtype=bool)
    if h < 3 or w < 3:
        return NormalMap(values=values, mask=mask, cam=d.cam)

    tx = p[1:-1, 2:] - p[1:-1, :-2]
    ty = p[2:, 1:-1] - p[:-2, 1:-1]
    n = np.cross(tx, ty)
    length = np.linalg.norm(n, axis=-1)

    m = d.mask
    ok = m[1:-1, 1:-1] & m[1:-1, 2:] & m[1:-1, :-2] & m[2:, 1:-1] & m[:-2, 1:-1]
    ok &= length > 1e-12

    unit = np.zeros_like(n)
    np.divide(n, length[..., None], out=unit, where=(length > 1e-12)[..., None])
    flip = unit[..., 2] > 0
    unit[flip] = -unit[flip]

    values[1:-1, 1:-1][ok] = unit[ok]
    mask[1:-1, 1:-1] = ok
    return NormalMap(values=values, mask=mask, cam=d.cam)
