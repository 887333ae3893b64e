"""On-disk formats: PFM float maps, PPM/PGM images, and parameter checkpoints.

PFM files here are always grayscale ("Pf") with scale -1.0, meaning
little-endian floats. Rows are stored bottom-up per the PFM convention.
Multi-channel maps are written as vertically stacked grayscale planes
(plane 0 topmost), so any PFM tool can still open them.

Checkpoints: magic "CAMF", u32 version, length-prefixed config JSON, then one
record per tensor (length-prefixed name, u32 rank, u32 dims, float32 data).
All integers little-endian.
"""

from __future__ import annotations

import json
import struct

import numpy as np

CHECKPOINT_MAGIC = b"CAMF"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------- netpbm-style headers

def _read_tokens(fh, n):
    """Next n whitespace-separated header tokens, skipping # comments."""
    tokens = []
    while len(tokens) < n:
        line = fh.readline()
        if not line:
            raise ValueError("truncated header")
        line = line.split(b"#", 1)[0]
        tokens.extend(line.split())
    return tokens[:n]


def write_pfm(path, values: np.ndarray) -> None:
    if values.ndim != 2:
        raise ValueError(f"PFM writer takes an (h, w) array, got shape {values.shape}")
    data = np.flipud(values.astype("<f4", copy=False))
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{values.shape[1]} {values.shape[0]}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(data.tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = _read_tokens(fh, 1)[0]
        if magic != b"Pf":
            raise ValueError(f"expected grayscale PFM magic 'Pf', got {magic!r}")
        w, h = (int(t) for t in _read_tokens(fh, 2))
        scale = float(_read_tokens(fh, 1)[0])
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(4 * w * h), dtype=dtype)
        if data.size != w * h:
            raise ValueError("truncated PFM data")
    return np.flipud(data.reshape(h, w)).astype(np.float32)


def write_pfm_planes(path, values: np.ndarray) -> None:
    """(h, w, c) array as c vertically stacked grayscale planes, plane 0 on top."""
    if values.ndim != 3:
        raise ValueError(f"expected (h, w, c), got shape {values.shape}")
    planes = [values[:, :, k] for k in range(values.shape[2])]
    write_pfm(path, np.concatenate(planes, axis=0))


def read_pfm_planes(path, channels: int) -> np.ndarray:
    stacked = read_pfm(path)
    if stacked.shape[0] % channels:
        raise ValueError(f"height {stacked.shape[0]} is not divisible into {channels} planes")
    h = stacked.shape[0] // channels
    return np.stack([stacked[k * h:(k + 1) * h] for k in range(channels)], axis=-1)


def write_ppm(path, rgb: np.ndarray) -> None:
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError("PPM writer takes an (h, w, 3) uint8 array")
    with open(path, "wb") as fh:
        fh.write(b"P6\n")
        fh.write(f"{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode())
        fh.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = _read_tokens(fh, 1)[0]
        if magic != b"P6":
            raise ValueError(f"expected PPM magic 'P6', got {magic!r}")
        w, h, maxval = (int(t) for t in _read_tokens(fh, 3))
        if maxval != 255:
            raise ValueError(f"only maxval 255 supported, got {maxval}")
        data = np.frombuffer(fh.read(w * h * 3), dtype=np.uint8)
        if data.size != w * h * 3:
            raise ValueError("truncated PPM data")
    return data.reshape(h, w, 3).copy()


def write_pgm(path, gray: np.ndarray) -> None:
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ValueError("PGM writer takes an (h, w) uint8 array")
    with open(path, "wb") as fh:
        fh.write(b"P5\n")
        fh.write(f"{gray.shape[1]} {gray.shape[0]}\n255\n".encode())
        fh.write(gray.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = _read_tokens(fh, 1)[0]
        if magic != b"P5":
            raise ValueError(f"expected PGM magic 'P5', got {magic!r}")
        w, h, maxval = (int(t) for t in _read_tokens(fh, 3))
        if maxval != 255:
            raise ValueError(f"only maxval 255 supported, got {maxval}")
        data = np.frombuffer(fh.read(w * h), dtype=np.uint8)
        if data.size != w * h:
            raise ValueError("truncated PGM data")
    return data.reshape(h, w).copy()


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, params: dict[str, np.ndarray], config: dict) -> None:
    blob = json.dumps(config, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            tensor = np.ascontiguousarray(params[name], dtype="<f4")
            encoded = name.encode()
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            fh.write(tensor.tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError("not a CAMF checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        config = json.loads(fh.read(blob_len).decode())
        (count,) = struct.unpack("<I", fh.read(4))
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode()
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(4 * n), dtype="<f4")
            if data.size != n:
                raise ValueError(f"truncated tensor data for {name!r}")
            params[name] = data.reshape(shape).astype(np.float32)
    return params, config
