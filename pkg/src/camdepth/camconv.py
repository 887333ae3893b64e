"""Per-pixel calibration channels concatenated into the depth network.

Three map families, each an (h, w) float array over the sensor grid:
  * centered coordinates cc: signed pixel offset from the principal point,
    cc_x[v, u] = u - cx and cc_y[v, u] = v - cy.
  * field of view fov: the ray angle per pixel, arctan(cc / f), radians.
  * normalized coordinates nc: calibration-independent ramp from -1 to 1
    across the sensor, nc_x[v, u] = -1 + 2u / (w - 1) (0 when w == 1).

cc and fov are built at the camera's native resolution and resampled with the
corner-aligned bilinear kernel, which keeps affine maps affine. nc is built
directly at the target resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics
from .interp import resample_bilinear

CHANNEL_ORDER = ("cc_x", "cc_y", "fov_x", "fov_y", "nc_x", "nc_y")


def make_cc(cam: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    u = np.arange(cam.w, dtype=np.float64) - cam.cx
    v = np.arange(cam.h, dtype=np.float64) - cam.cy
    cc_x = np.broadcast_to(u[None, :], (cam.h, cam.w)).copy()
    cc_y = np.broadcast_to(v[:, None], (cam.h, cam.w)).copy()
    return cc_x, cc_y


def make_fov(cam: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    cc_x, cc_y = make_cc(cam)
    return np.arctan(cc_x / cam.f), np.arctan(cc_y / cam.f)


def make_nc(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    if h < 1 or w < 1:
        raise ValueError(f"resolution must be >= 1, got {h}x{w}")
    ramp_x = np.zeros(w) if w == 1 else -1.0 + 2.0 * np.arange(w, dtype=np.float64) / (w - 1)
    ramp_y = np.zeros(h) if h == 1 else -1.0 + 2.0 * np.arange(h, dtype=np.float64) / (h - 1)
    nc_x = np.broadcast_to(ramp_x[None, :], (h, w)).copy()
    nc_y = np.broadcast_to(ramp_y[:, None], (h, w)).copy()
    return nc_x, nc_y


@dataclass(frozen=True)
class ChannelStack:
    """The six calibration channels at one feature resolution."""

    cc_x: np.ndarray
    cc_y: np.ndarray
    fov_x: np.ndarray
    fov_y: np.ndarray
    nc_x: np.ndarray
    nc_y: np.ndarray
    source_cam: CameraIntrinsics

    def as_array(self) -> np.ndarray:
        """(h, w, 6) array in CHANNEL_ORDER."""
        return np.stack([getattr(self, name) for name in CHANNEL_ORDER], axis=-1)


def make_stack(cam: CameraIntrinsics, out_h: int, out_w: int) -> ChannelStack:
    """Build all six channels for `cam` at resolution (out_h, out_w)."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target resolution must be >= 1, got {out_h}x{out_w}")
    cc_x, cc_y = make_cc(cam)
    fov_x, fov_y = make_fov(cam)
    if (out_h, out_w) != (cam.h, cam.w):
        cc_x = resample_bilinear(cc_x, out_h, out_w)
        cc_y = resample_bilinear(cc_y, out_h, out_w)
        fov_x = resample_bilinear(fov_x, out_h, out_w)
        fov_y = resample_bilinear(fov_y, out_h, out_w)
    nc_x, nc_y = make_nc(out_h, out_w)
    return ChannelStack(cc_x=cc_x, cc_y=cc_y, fov_x=fov_x, fov_y=fov_y,
                        nc_x=nc_x, nc_y=nc_y, source_cam=cam)
