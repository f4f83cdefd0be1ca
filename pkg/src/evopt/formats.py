"""On-disk formats: float32 tensor container, PNG images, TUM trajectories,
and the checkpoint container."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .geometry import Pose

MAGIC = b"EVF1"
_HEADER = struct.Struct("<4sIII")


class FormatError(ValueError):
    pass


def write_f32(path, array) -> None:
    a = np.asarray(array, dtype="<f4")
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3:
        raise ValueError(f"float32 container holds HxWxC tensors, got shape {a.shape}")
    H, W, C = a.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, H, W, C))
        f.write(np.ascontiguousarray(a).tobytes())


def read_f32(path) -> np.ndarray:
    """Read an HxWxC float32 container as float64."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, H, W, C = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    n = H * W * C
    if len(data) != _HEADER.size + 4 * n:
        raise FormatError(f"{path}: expected {n} floats")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(H, W, C).astype(float)


def write_png(path, image, bits: int = 16) -> None:
    a = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    if bits == 8:
        PILImage.fromarray(np.round(a * 255).astype(np.uint8)).save(path)
    elif bits == 16:
        if a.ndim != 2:
            raise ValueError("16-bit PNG output supports grayscale only")
        PILImage.fromarray(np.round(a * 65535).astype(np.uint16)).save(path)
    else:
        raise ValueError("bits must be 8 or 16")


def read_png(path) -> np.ndarray:
    with PILImage.open(path) as im:
        a = np.asarray(im)
        mode = im.mode
    if a.dtype == np.uint8:
        return a.astype(float) / 255.0
    if mode.startswith("I;16") or a.dtype == np.uint16 or mode == "I":
        return a.astype(float) / 65535.0
    raise FormatError(f"{path}: unsupported PNG mode {mode}")


def read_image(path) -> np.ndarray:
    """Image from PNG or float32 container; single channel squeezed to HxW."""
    path = Path(path)
    a = read_f32(path) if path.suffix == ".f32" else read_png(path)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    return a


def write_tum(path, times, poses) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for t, P in zip(times, poses):
            w, x, y, z = P.rotation
            tx, ty, tz = P.translation
            f.write(" ".join(repr(float(v)) for v in (t, tx, ty, tz, x, y, z, w)) + "\n")


def read_tum(path):
    """Return (times, poses) from a TUM file (t tx ty tz qx qy qz qw)."""
    times, poses = [], []
    with open(path, encoding="utf-8") as f:
        for no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise FormatError(f"{path}:{no}: expected 8 fields")
            v = [float(s) for s in parts]
            times.append(v[0])
            poses.append(Pose(np.array([v[7], v[4], v[5], v[6]]), v[1:4]))
    return np.array(times), poses


def write_checkpoint(path_stem, tensors: dict) -> None:
    """All tensors flattened into one float32 container plus a JSON manifest."""
    path_stem = Path(path_stem)
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        a = np.asarray(arr, dtype=float)
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.ravel())
        offset += a.size
    flat = np.concatenate(chunks) if chunks else np.zeros(0)
    write_f32(path_stem.with_suffix(".f32"), flat.reshape(1, -1, 1))
    manifest = {"container": path_stem.with_suffix(".f32").name, "tensors": entries}
    path_stem.with_suffix(".json").write_text(json.dumps(manifest, indent=2) + "\n")


def read_checkpoint(path_stem) -> dict:
    path_stem = Path(path_stem)
    manifest = json.loads(path_stem.with_suffix(".json").read_text())
    flat = read_f32(path_stem.parent / manifest["container"]).ravel()
    out = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        out[e["name"]] = flat[e["offset"]:e["offset"] + n].reshape(e["shape"])
    return out
