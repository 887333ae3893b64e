"""Pinhole camera intrinsics and the transforms the rest of the package leans on.

Conventions, used consistently everywhere:
  * image coordinates (u, v): u along width (columns), v along height (rows),
    origin at the top-left pixel. Integer pixel index p corresponds to
    continuous coordinate p exactly (no half-pixel offset).
  * camera frame: X right, Y down, Z forward (optical axis). Depth is the
    Z coordinate, not ray length.
  * focal length f is in pixels and isotropic. Anisotropic resizing is folded
    into a single focal via the average-focal approximation and flagged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class CameraIntrinsics:
    """Isotropic pinhole intrinsics for a w x h pixel sensor."""

    f: float
    cx: float
    cy: float
    w: int
    h: int

    def __post_init__(self):
        if not (math.isfinite(self.f) and self.f > 0):
            raise ValueError(f"focal length must be finite and positive, got {self.f}")
        if not (math.isfinite(self.cx) and math.isfinite(self.cy)):
            raise ValueError("principal point must be finite")
        if self.w < 1 or self.h < 1 or self.w != int(self.w) or self.h != int(self.h):
            raise ValueError(f"sensor size must be integer and >= 1, got {self.w}x{self.h}")


@dataclass(frozen=True)
class FocalNormalization:
    """Reference focal length that normalized inverse depths are expressed in."""

    f_n: float = 100.0

    def __post_init__(self):
        if not (math.isfinite(self.f_n) and self.f_n > 0):
            raise ValueError(f"normalization focal must be finite and positive, got {self.f_n}")


# Sensor-size and focal-length taxonomy used by all experiments, (w, h) pixels.
SENSOR_SIZES: dict[str, tuple[int, int]] = {
    "s1": (256, 192),
    "s2": (192, 256),
    "s3": (224, 224),
    "s4": (128, 96),
    "s5": (320, 320),
    "sS": (256, 192),
    "sK": (384, 128),
}

FOCAL_LENGTHS: dict[str, float] = {
    "f72": 72.0,
    "f128": 128.0,
    "f64": 64.0,
    "fn": 100.0,
}

DEFAULT_NORMALIZED_FOCAL = FOCAL_LENGTHS["fn"]


def preset_camera(sensor: str, focal: str | float, scale: float = 1.0) -> CameraIntrinsics:
    """Camera for a named sensor size and focal, principal point at the center.

    `focal` is either a taxonomy key ("f72") or a focal length in pixels.
    `scale` shrinks sensor and focal together, preserving the field of view.
    """
    if sensor not in SENSOR_SIZES:
        raise ValueError(f"unknown sensor {sensor!r}, have {sorted(SENSOR_SIZES)}")
    w, h = SENSOR_SIZES[sensor]
    f = FOCAL_LENGTHS[focal] if isinstance(focal, str) else float(focal)
    if scale != 1.0:
        w = _round_half_away(w * scale)
        h = _round_half_away(h * scale)
        f = f * scale
    return CameraIntrinsics(f=f, cx=w / 2.0, cy=h / 2.0, w=w, h=h)


def _round_half_away(x: float) -> int:
    # round-half-away-from-zero; python round() would round half to even
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def crop_intrinsics(cam: CameraIntrinsics, x0: float, y0: float, new_w: int, new_h: int) -> CameraIntrinsics:
    """Intrinsics of the new_w x new_h window whose top-left pixel is (x0, y0).

    Cropping only shifts the principal point; f is unchanged.
    """
    return CameraIntrinsics(f=cam.f, cx=cam.cx - x0, cy=cam.cy - y0, w=new_w, h=new_h)


class ResizedCamera(NamedTuple):
    cam: CameraIntrinsics
    f_avg: float
    exact: bool  # False when rx != ry and the average-focal approximation is in play


def resize_intrinsics(cam: CameraIntrinsics, rx: float, ry: float) -> ResizedCamera:
    """Intrinsics after scaling the image by (rx, ry).

    Sensor sizes round half away from zero. The principal point scales per
    axis; the single isotropic focal becomes f * (rx + ry) / 2, which is exact
    for rx == ry and an approximation otherwise (flagged via `exact`).
    """
    if rx <= 0 or ry <= 0:
        raise ValueError(f"resize factors must be positive, got ({rx}, {ry})")
    new_w = _round_half_away(cam.w * rx)
    new_h = _round_half_away(cam.h * ry)
    if new_w < 1 or new_h < 1:
        raise ValueError(f"resize to {new_w}x{new_h} leaves no pixels")
    f_avg = cam.f * (rx + ry) / 2.0
    out = CameraIntrinsics(f=f_avg, cx=cam.cx * rx, cy=cam.cy * ry, w=new_w, h=new_h)
    return ResizedCamera(cam=out, f_avg=f_avg, exact=rx == ry)


def backproject(cam: CameraIntrinsics, u, v, depth):
    """Pixel (u, v) at Z-depth `depth` to camera-frame (X, Y, Z).

    Accepts scalars or broadcasting arrays.
    """
    x = (u - cam.cx) * depth / cam.f
    y = (v - cam.cy) * depth / cam.f
    return x, y, depth * 1.0


def project(cam: CameraIntrinsics, x, y, z):
    """Camera-frame point to pixel coordinates (u, v). Requires Z > 0."""
    if np.any(np.asarray(z) <= 0):
        raise ValueError("cannot project points at or behind the camera plane")
    return cam.f * x / z + cam.cx, cam.f * y / z + cam.cy


def intrinsics_to_dict(cam: CameraIntrinsics, focal_normalized_to: float | None = None) -> dict:
    return {
        "f": cam.f,
        "cx": cam.cx,
        "cy": cam.cy,
        "w": cam.w,
        "h": cam.h,
        "focal_normalized_to": focal_normalized_to,
    }


def intrinsics_from_dict(obj: dict) -> tuple[CameraIntrinsics, float | None]:
    cam = CameraIntrinsics(
        f=float(obj["f"]), cx=float(obj["cx"]), cy=float(obj["cy"]), w=int(obj["w"]), h=int(obj["h"])
    )
    return cam, obj.get("focal_normalized_to")


def save_intrinsics(path, cam: CameraIntrinsics, focal_normalized_to: float | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(intrinsics_to_dict(cam, focal_normalized_to), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_intrinsics(path) -> tuple[CameraIntrinsics, float | None]:
    with open(path) as fh:
        return intrinsics_from_dict(json.load(fh))
