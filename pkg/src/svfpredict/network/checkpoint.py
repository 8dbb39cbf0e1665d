"""Checkpoint container: a zip holding ``manifest.json`` and raw tensors.

Tensor payloads are little-endian float64 in C order, one member per tensor
under ``tensors/``. Member timestamps are fixed so identical models produce
byte-identical files.
"""

from __future__ import annotations

import json
import zipfile
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..attributes import AttributeNormalizer
from .unet import ModelParams, NetConfig, VelocityNet

FORMAT = "svfpredict-checkpoint/1"
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _member(zf: zipfile.ZipFile, name: str, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path, net: VelocityNet, extra: dict | None = None):
    manifest = {
        "format": FORMAT,
        "config": net.config_dict(),
        "seed": net.params.seed,
        "frozen": sorted(net.params.frozen),
        "normalizer": net.normalizer.to_json() if net.normalizer is not None else None,
        "tensors": [
            {"name": k, "shape": list(v.shape), "dtype": "<f8", "path": f"tensors/{i:03d}.bin"}
            for i, (k, v) in enumerate(net.params.tensors.items())
        ],
        "extra": extra or {},
    }
    with zipfile.ZipFile(path, "w") as zf:
        _member(zf, "manifest.json", (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
        for entry, v in zip(manifest["tensors"], net.params.tensors.values()):
            _member(zf, entry["path"], np.ascontiguousarray(v, dtype="<f8").tobytes())
    return Path(path)


def load_checkpoint(path) -> tuple[VelocityNet, dict]:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {manifest.get('format')!r}")
        tensors = OrderedDict()
        for entry in manifest["tensors"]:
            raw = zf.read(entry["path"])
            tensors[entry["name"]] = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
    cfg = manifest["config"]
    net_cfg = NetConfig(**cfg["net"])
    normalizer = AttributeNormalizer.from_json(manifest["normalizer"]) if manifest["normalizer"] else None
    params = ModelParams(tensors, manifest["seed"], manifest["frozen"])
    net = VelocityNet(net_cfg, cfg["ndim"], cfg["n_attributes"], params=params, normalizer=normalizer)
    expected = net._init_params(0)
    if [(k, v.shape) for k, v in expected.tensors.items()] != [(k, v.shape) for k, v in tensors.items()]:
        raise ValueError(f"{path}: tensor layout does not match the stored network config")
    return net, manifest
