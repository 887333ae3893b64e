"""Procedural box scenes, a pinhole ray renderer, and the dataset builder.

Scenes are axis-aligned: a room interior spanning [0, extents] in a z-up world
with catalog objects resting on the floor. Object sizes come from a fixed
catalog and the checkerboard texture is anchored in world units, so images
carry absolute scale cues; single-view depth is unlearnable without them.

Rendering casts one ray per pixel center using the camera convention of the
`camera` module and stores Z-depth (the camera-frame z of the hit point, not
ray length), so fronto-parallel surfaces are constant-depth. Deterministic:
1 sample per pixel, pure float arithmetic, no time or global-state inputs.

`derive_view` synthesizes a new camera from an existing sample by crop plus
bilinear resize. The resize grid maps target pixel q to source q / factor
(matching how `resize_intrinsics` transforms the principal point) rather than
stretching endpoints; depth values pass through unchanged because Z-depth is
resample-invariant. Target pixels whose 2x2 bilinear support spans a relative
depth jump above 10% are masked as discontinuities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import fileio
from .camera import (
    FOCAL_LENGTHS,
    CameraIntrinsics,
    crop_intrinsics,
    load_intrinsics,
    preset_camera,
    resize_intrinsics,
    save_intrinsics,
)
from .depthmap import DepthMap, valid_depth_mask
from .interp import line_positions, line_support, resample_bilinear

# name, (sx, sy, sz) in meters, checker period in meters
CATALOG = (
    ("chair", (0.5, 0.5, 1.0), 0.10),
    ("table", (1.2, 0.8, 0.75), 0.15),
    ("cabinet", (0.6, 0.4, 1.8), 0.20),
    ("crate", (0.4, 0.4, 0.4), 0.08),
    ("sofa", (1.8, 0.9, 0.8), 0.25),
    ("shelf", (0.9, 0.3, 1.5), 0.12),
)
ROOM_TEXTURE_SCALE = 0.5
AMBIENT = 0.25
CHECKER_DARK = 0.6
FREE_HALF = 0.5  # cameras live in a 1 m cube at the room center
JUMP_REL = 0.10

_TAG_POSE, _TAG_FOCAL = 0, 1


@dataclass(frozen=True)
class ObjectBox:
    name: str
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    albedo: tuple[float, float, float]
    texture_scale: float


@dataclass(frozen=True)
class Scene:
    room: tuple[float, float, float]  # interior extents; interior is [0, room]
    objects: tuple[ObjectBox, ...]
    light: tuple[float, float, float]  # unit vector toward the light source
    room_albedo: tuple[float, float, float]
    seed: int


@dataclass(frozen=True)
class CameraPose:
    """Rigid camera placement: rotation columns are the camera axes in world."""

    position: tuple[float, float, float]
    rotation: tuple  # 3x3 nested tuple, camera-to-world

    def __post_init__(self):
        r = self.rotation_matrix()
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9) or np.linalg.det(r) < 0:
            raise ValueError("rotation must be orthonormal and right-handed")

    def rotation_matrix(self) -> np.ndarray:
        return np.array(self.rotation, dtype=np.float64)

    def position_vector(self) -> np.ndarray:
        return np.array(self.position, dtype=np.float64)


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> CameraPose:
    """Pose whose z-axis points at `target`, y-axis as world-down as possible."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    n = np.linalg.norm(forward)
    if n < 1e-12:
        raise ValueError("target coincides with the camera position")
    z = forward / n
    x = np.cross(-np.asarray(up, dtype=np.float64), z)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        raise ValueError("viewing direction is parallel to the up vector")
    x /= nx
    y = np.cross(z, x)
    rot = np.stack([x, y, z], axis=1)
    return CameraPose(position=tuple(position), rotation=tuple(map(tuple, rot)))


PROVENANCE_RENDERED = "rendered"
PROVENANCE_DERIVED = "derived-by-crop-resize"


@dataclass(frozen=True)
class Sample:
    rgb: np.ndarray  # (h, w, 3) in [0, 1]
    depth: DepthMap
    cam: CameraIntrinsics
    scene_seed: int
    provenance: str
    pose: CameraPose | None = None


# ---------------------------------------------------------------- scene generation

def generate_scene(seed: int) -> Scene:
    rng = np.random.default_rng(seed)
    room = rng.uniform(3.0, 8.0, size=3)
    room_albedo = tuple(rng.uniform(0.4, 0.8, size=3))
    while True:
        light = rng.normal(size=3)
        n = np.linalg.norm(light)
        if n > 1e-6 and light[2] / n >= 0.3:
            light = light / n
            break
    free_lo = room / 2.0 - FREE_HALF
    free_hi = room / 2.0 + FREE_HALF
    n_objects = int(rng.integers(4, 11))
    objects = []
    for _ in range(n_objects):
        name, size, texture_scale = CATALOG[int(rng.integers(len(CATALOG)))]
        size_arr = np.array(size)
        albedo = tuple(rng.uniform(0.2, 0.9, size=3))
        for _attempt in range(50):
            center = np.array([
                rng.uniform(size[0] / 2, room[0] - size[0] / 2),
                rng.uniform(size[1] / 2, room[1] - size[1] / 2),
                size[2] / 2.0,  # rests on the floor
            ])
            lo, hi = center - size_arr / 2, center + size_arr / 2
            if np.any(hi <= free_lo) or np.any(lo >= free_hi):
                objects.append(ObjectBox(name=name, center=tuple(center), size=size,
                                         albedo=albedo, texture_scale=texture_scale))
                break
    return Scene(room=tuple(room), objects=tuple(objects), light=tuple(light),
                 room_albedo=room_albedo, seed=seed)


def free_region(scene: Scene) -> tuple[np.ndarray, np.ndarray]:
    room = np.array(scene.room)
    return room / 2.0 - FREE_HALF, room / 2.0 + FREE_HALF


def sample_pose(scene: Scene, rng: np.random.Generator) -> CameraPose:
    """Random camera in the free region looking at a distant room point."""
    lo, hi = free_region(scene)
    room = np.array(scene.room)
    for _ in range(200):
        position = rng.uniform(lo, hi)
        target = rng.uniform(np.zeros(3), room)
        d = target - position
        n = np.linalg.norm(d)
        if n < 1.0 or abs(d[2]) / n > 0.95:
            continue
        return look_at(position, target)
    raise RuntimeError("could not sample a camera pose")


# ---------------------------------------------------------------- rendering

def _slab(origin: np.ndarray, dirs: np.ndarray, lo, hi):
    """Ray-box entry/exit parameters and the axes where they occur."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (np.asarray(lo) - origin) / dirs
        t2 = (np.asarray(hi) - origin) / dirs
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    t_enter = tmin.max(axis=2)
    t_exit = tmax.min(axis=2)
    return t_enter, t_exit, tmin.argmax(axis=2), tmax.argmin(axis=2)


def render(scene: Scene, cam: CameraIntrinsics, pose: CameraPose) -> Sample:
    room = np.array(scene.room)
    origin = pose.position_vector()
    if np.any(origin <= 0.0) or np.any(origin >= room):
        raise ValueError("camera outside the room")
    rot = pose.rotation_matrix()

    u = (np.arange(cam.w, dtype=np.float64) - cam.cx) / cam.f
    v = (np.arange(cam.h, dtype=np.float64) - cam.cy) / cam.f
    dirs_cam = np.empty((cam.h, cam.w, 3))
    dirs_cam[:, :, 0] = u[None, :]
    dirs_cam[:, :, 1] = v[:, None]
    dirs_cam[:, :, 2] = 1.0
    dirs = dirs_cam @ rot.T  # camera z-component is 1, so ray parameter == Z-depth

    _, t_exit, _, exit_axis = _slab(origin, dirs, np.zeros(3), room)
    best_t = t_exit
    best_axis = exit_axis
    best_obj = np.full((cam.h, cam.w), -1, dtype=np.int64)
    for k, obj in enumerate(scene.objects):
        size = np.array(obj.size)
        center = np.array(obj.center)
        te, tx, axis_e, _ = _slab(origin, dirs, center - size / 2, center + size / 2)
        hit = (te > 1e-9) & (te <= tx) & (te < best_t)
        best_t = np.where(hit, te, best_t)
        best_axis = np.where(hit, axis_e, best_axis)
        best_obj = np.where(hit, k, best_obj)

    hit_points = origin + best_t[:, :, None] * dirs
    axis_dir = np.take_along_axis(dirs, best_axis[:, :, None], axis=2)[:, :, 0]
    # entering face of an object and exit face of the room both face against the ray
    normal_sign = -np.sign(axis_dir)
    normals = np.zeros((cam.h, cam.w, 3))
    np.put_along_axis(normals, best_axis[:, :, None], normal_sign[:, :, None], axis=2)

    albedo = np.empty((cam.h, cam.w, 3))
    albedo[:] = np.array(scene.room_albedo)
    texture_scale = np.full((cam.h, cam.w), ROOM_TEXTURE_SCALE)
    for k, obj in enumerate(scene.objects):
        sel = best_obj == k
        albedo[sel] = np.array(obj.albedo)
        texture_scale[sel] = obj.texture_scale

    lambert = np.maximum(normals @ np.array(scene.light), 0.0)
    shade = AMBIENT + (1.0 - AMBIENT) * lambert
    parity = np.floor(hit_points / texture_scale[:, :, None]).sum(axis=2) % 2
    checker = np.where(parity == 0, 1.0, CHECKER_DARK)
    rgb = np.clip(albedo * (shade * checker)[:, :, None], 0.0, 1.0)

    depth = DepthMap(values=best_t, mask=valid_depth_mask(best_t), cam=cam)
    return Sample(rgb=rgb, depth=depth, cam=cam, scene_seed=scene.seed,
                  provenance=PROVENANCE_RENDERED, pose=pose)


# ---------------------------------------------------------------- derived views

def _support_extremes(values, mask, j0, j1, ay, i0, i1, ax):
    """Min/max over bilinear support corners with weight > 0, plus joint validity."""
    vmax = np.full((j0.size, i0.size), -np.inf)
    vmin = np.full((j0.size, i0.size), np.inf)
    ok = np.ones((j0.size, i0.size), dtype=bool)
    for rows, wr in ((j0, 1.0 - ay), (j1, ay)):
        for cols, wc in ((i0, 1.0 - ax), (i1, ax)):
            weight = wr[:, None] * wc[None, :]
            contributes = weight > 0.0
            vals = values[rows[:, None], cols[None, :]]
            vmax = np.where(contributes, np.maximum(vmax, vals), vmax)
            vmin = np.where(contributes, np.minimum(vmin, vals), vmin)
            ok &= ~contributes | mask[rows[:, None], cols[None, :]]
    return vmin, vmax, ok


def derive_view(sample: Sample, window: tuple[int, int, int, int],
                factors: tuple[float, float]) -> Sample:
    """New sample as seen by the cropped-and-rescaled camera."""
    x0, y0, cw, ch = (int(t) for t in window)
    rx, ry = float(factors[0]), float(factors[1])
    cam = sample.cam
    if cw < 1 or ch < 1:
        raise ValueError("empty crop window")
    if x0 < 0 or y0 < 0 or x0 + cw > cam.w or y0 + ch > cam.h:
        raise ValueError(f"crop window {window} outside the {cam.w}x{cam.h} sensor")

    cropped_cam = crop_intrinsics(cam, x0, y0, cw, ch)
    out_cam = resize_intrinsics(cropped_cam, rx, ry).cam

    rgb_c = sample.rgb[y0:y0 + ch, x0:x0 + cw]
    depth_c = sample.depth.values[y0:y0 + ch, x0:x0 + cw]
    mask_c = sample.depth.mask[y0:y0 + ch, x0:x0 + cw]

    rgb = resample_bilinear(rgb_c, out_cam.h, out_cam.w, mode="scale", rx=rx, ry=ry)
    depth = resample_bilinear(depth_c, out_cam.h, out_cam.w, mode="scale", rx=rx, ry=ry)

    i0, i1, ax = line_support(line_positions(cw, out_cam.w, "scale", rx), cw)
    j0, j1, ay = line_support(line_positions(ch, out_cam.h, "scale", ry), ch)
    vmin, vmax, ok = _support_extremes(depth_c, mask_c, j0, j1, ay, i0, i1, ax)
    smooth = np.zeros_like(ok)
    smooth[ok] = (vmax[ok] - vmin[ok]) <= JUMP_REL * vmin[ok]
    mask = ok & smooth & valid_depth_mask(depth)

    return Sample(rgb=rgb, depth=DepthMap(values=depth, mask=mask, cam=out_cam),
                  cam=out_cam, scene_seed=sample.scene_seed,
                  provenance=PROVENANCE_DERIVED, pose=sample.pose)


def sample_augmentation(rng: np.random.Generator, cam: CameraIntrinsics,
                        out_w: int, out_h: int,
                        scale_range: tuple[float, float] = (0.7, 1.3),
                        max_shift: float = 0.15):
    """Random (window, factors) for derive_view producing an out_w x out_h view.

    `scale_range` bounds the derived-over-source focal ratio; the window center
    shifts by at most `max_shift` of each sensor extent.
    """
    s = rng.uniform(*scale_range)
    cw = int(np.clip(round(out_w / s), 2, cam.w))
    ch = int(np.clip(round(out_h / s), 2, cam.h))
    ux = rng.uniform(-max_shift, max_shift) * cam.w
    uy = rng.uniform(-max_shift, max_shift) * cam.h
    x0 = int(np.clip(round(cam.w / 2 + ux - cw / 2), 0, cam.w - cw))
    y0 = int(np.clip(round(cam.h / 2 + uy - ch / 2), 0, cam.h - ch))
    return (x0, y0, cw, ch), (out_w / cw, out_h / ch)


# ---------------------------------------------------------------- datasets on disk

@dataclass(frozen=True)
class CameraRule:
    """One camera column of a dataset: sensor preset plus focal rule.

    focal: taxonomy key ("f72"), a number in pixels, or ("uniform", lo, hi)
    drawn per sample. Values are at full scale; DatasetSpec.scale shrinks them.
    """

    sensor: str
    focal: object

    def to_json(self):
        focal = list(self.focal) if isinstance(self.focal, tuple) else self.focal
        return {"sensor": self.sensor, "focal": focal}

    @staticmethod
    def from_json(obj) -> "CameraRule":
        focal = obj["focal"]
        if isinstance(focal, list):
            focal = (str(focal[0]), float(focal[1]), float(focal[2]))
        return CameraRule(sensor=obj["sensor"], focal=focal)


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    cameras: tuple[CameraRule, ...]
    scene_seed_start: int
    n_scenes: int
    views_per_scene: int
    scale: float = 1.0  # shrinks sensors and focals together (FOV preserved)
    seed: int = 0

    def __post_init__(self):
        if self.n_scenes < 1 or self.views_per_scene < 1 or not self.cameras:
            raise ValueError("dataset needs cameras, scenes and views")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def n_samples(self) -> int:
        return self.n_scenes * self.views_per_scene

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "cameras": [c.to_json() for c in self.cameras],
            "scene_seed_start": self.scene_seed_start,
            "n_scenes": self.n_scenes,
            "views_per_scene": self.views_per_scene,
            "scale": self.scale,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(obj: dict) -> "DatasetSpec":
        return DatasetSpec(
            name=obj["name"],
            cameras=tuple(CameraRule.from_json(c) for c in obj["cameras"]),
            scene_seed_start=int(obj["scene_seed_start"]),
            n_scenes=int(obj["n_scenes"]),
            views_per_scene=int(obj["views_per_scene"]),
            scale=float(obj["scale"]),
            seed=int(obj["seed"]),
        )


def _resolve_focal(rule: CameraRule, spec: DatasetSpec, scene_seed: int, view: int) -> float:
    if isinstance(rule.focal, str):
        return FOCAL_LENGTHS[rule.focal]
    if isinstance(rule.focal, tuple):
        kind, lo, hi = rule.focal
        if kind != "uniform":
            raise ValueError(f"unknown focal rule {rule.focal!r}")
        rng = np.random.default_rng((spec.seed, scene_seed, view, _TAG_FOCAL))
        return float(rng.uniform(lo, hi))
    return float(rule.focal)


def sample_camera(spec: DatasetSpec, rule: CameraRule, scene_seed: int, view: int) -> CameraIntrinsics:
    f = _resolve_focal(rule, spec, scene_seed, view)
    return preset_camera(rule.sensor, f, scale=spec.scale)


def render_sample(spec: DatasetSpec, index: int) -> Sample:
    """Sample `index` of the dataset, rendered in memory.

    Cameras round-robin over the sample index while pose and focal draws are
    keyed by (seed, scene, view) only, so specs differing just in their camera
    list show the same content through different lenses.
    """
    if not 0 <= index < spec.n_samples:
        raise ValueError(f"sample index {index} out of range")
    scene_seed = spec.scene_seed_start + index // spec.views_per_scene
    view = index % spec.views_per_scene
    rule = spec.cameras[index % len(spec.cameras)]
    scene = generate_scene(scene_seed)
    pose = sample_pose(scene, np.random.default_rng((spec.seed, scene_seed, view, _TAG_POSE)))
    cam = sample_camera(spec, rule, scene_seed, view)
    return render(scene, cam, pose)


MANIFEST_FORMAT = 1


def _sample_dir(index: int) -> str:
    return f"{index:06d}"


def write_sample(directory: Path, sample: Sample) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    rgb8 = np.clip(np.round(sample.rgb * 255.0), 0, 255).astype(np.uint8)
    fileio.write_ppm(directory / "rgb.ppm", rgb8)
    fileio.write_pfm(directory / "depth.pfm", sample.depth.values.astype(np.float32))
    fileio.write_pgm(directory / "mask.pgm", sample.depth.mask.astype(np.uint8) * 255)
    save_intrinsics(directory / "cam.json", sample.cam)


def load_sample(directory: Path, scene_seed: int = -1,
                provenance: str = PROVENANCE_RENDERED) -> Sample:
    directory = Path(directory)
    cam, _ = load_intrinsics(directory / "cam.json")
    rgb = fileio.read_ppm(directory / "rgb.ppm").astype(np.float64) / 255.0
    depth = fileio.read_pfm(directory / "depth.pfm").astype(np.float64)
    mask = fileio.read_pgm(directory / "mask.pgm") > 0
    return Sample(rgb=rgb, depth=DepthMap(values=depth, mask=mask, cam=cam), cam=cam,
                  scene_seed=scene_seed, provenance=provenance, pose=None)


def build_dataset(spec: DatasetSpec, root) -> Path:
    """Render the dataset under `root` unless an identical build already exists."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest_path = root / "manifest.json"
    with FileLock(str(root / ".build.lock")):
        if manifest_path.exists():
            existing = json.loads(manifest_path.read_text())
            if existing.get("spec") == spec.to_dict():
                return root
            raise ValueError(f"{root} already holds a different dataset")
        entries = []
        for index in range(spec.n_samples):
            sample = render_sample(spec, index)
            name = _sample_dir(index)
            write_sample(root / name, sample)
            entries.append({
                "dir": name,
                "scene_seed": sample.scene_seed,
                "view": index % spec.views_per_scene,
                "sensor": spec.cameras[index % len(spec.cameras)].sensor,
                "f": sample.cam.f,
                "w": sample.cam.w,
                "h": sample.cam.h,
                "provenance": sample.provenance,
            })
        manifest = {"format": MANIFEST_FORMAT, "spec": spec.to_dict(), "samples": entries}
        manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return root


def load_dataset(root) -> list[Sample]:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"unsupported dataset format {manifest.get('format')!r}")
    return [load_sample(root / e["dir"], scene_seed=e["scene_seed"], provenance=e["provenance"])
            for e in manifest["samples"]]
