"""Reader and writer for MFF field files.

Layout (little-endian)::

    b"MFF1" | u32 D | u32 dims[D] | u32 channels | u8 dtype | f64 spacing[D] | data

``dtype`` is 0 for f64, 1 for f32 and 2 for i32. Data is row-major with the
fastest-varying axis last; vector fields are written channel-first, i.e. as
an array of shape ``(channels, *dims)``. A JSON sidecar with the same
basename carries the field kind, structure names and provenance.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .fields import Grid, LabelMap, ScalarImage, VectorField

MAGIC = b"MFF1"
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("<i4")}


class MFFError(ValueError):
    pass


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_array(path, data: np.ndarray, spacing, channels: int, dtype_tag: int):
    arr = np.ascontiguousarray(data, dtype=_DTYPES[dtype_tag])
    dims = arr.shape[1:] if channels > 1 else arr.shape
    header = MAGIC + struct.pack(f"<I{len(dims)}II", len(dims), *dims, channels)
    header += struct.pack("<B", dtype_tag) + struct.pack(f"<{len(dims)}d", *spacing)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))


def read_array(path):
    """Return ``(data, spacing, channels)``; vector data comes back as (C, *dims)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise MFFError(f"{path}: not an MFF file")
    off = 4
    try:
        (D,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = struct.unpack_from(f"<{D}I", raw, off)
        off += 4 * D
        (channels,) = struct.unpack_from("<I", raw, off)
        off += 4
        (tag,) = struct.unpack_from("<B", raw, off)
        off += 1
        spacing = struct.unpack_from(f"<{D}d", raw, off)
        off += 8 * D
    except struct.error as exc:
        raise MFFError(f"{path}: truncated header") from exc
    if tag not in _DTYPES:
        raise MFFError(f"{path}: unknown dtype tag {tag}")
    dtype = _DTYPES[tag]
    shape = (channels, *dims) if channels > 1 else tuple(dims)
    count = int(np.prod(shape))
    if len(raw) - off != count * dtype.itemsize:
        raise MFFError(f"{path}: payload size does not match header")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=off).reshape(shape)
    return data, spacing, channels


def _write_sidecar(path, meta: dict):
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _read_sidecar(path) -> dict:
    p = sidecar_path(path)
    return json.loads(p.read_text()) if p.exists() else {}


def save(path, obj, provenance: dict | None = None, dtype_tag: int | None = None):
    """Write a ScalarImage, VectorField or LabelMap plus its JSON sidecar."""
    path = Path(path)
    meta = {"provenance": provenance or {}}
    if isinstance(obj, LabelMap):
        write_array(path, obj.values, obj.grid.spacing, 1, 2)
        meta["kind"] = "labels"
        meta["structure_names"] = {str(k): v for k, v in sorted(obj.structure_names.items())}
    elif isinstance(obj, VectorField):
        write_array(path, obj.values, obj.grid.spacing, obj.grid.ndim, 0 if dtype_tag is None else dtype_tag)
        meta["kind"] = "vector"
    elif isinstance(obj, ScalarImage):
        write_array(path, obj.values, obj.grid.spacing, 1, 0 if dtype_tag is None else dtype_tag)
        meta["kind"] = "scalar"
    else:
        raise TypeError(f"cannot write {type(obj).__name__} as MFF")
    _write_sidecar(path, meta)


def load(path):
    """Read an MFF file back into the matching field type."""
    data, spacing, channels = read_array(path)
    meta = _read_sidecar(path)
    kind = meta.get("kind")
    dims = data.shape[1:] if channels > 1 else data.shape
    grid = Grid(dims, spacing)
    if kind == "labels" or (kind is None and data.dtype.kind == "i"):
        names = {int(k): v for k, v in meta.get("structure_names", {}).items()}
        return LabelMap(data.astype(np.int32), grid, names)
    if channels > 1 or kind == "vector":
        return VectorField(data.astype(np.float64), grid)
    return ScalarImage(data.astype(np.float64), grid)
