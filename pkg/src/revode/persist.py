"""Checkpoint files: one JSON header line, then raw little-endian float32 arrays.

The header holds the architecture and a manifest of (name, shape, offset,
dtype) entries; offsets count bytes from the end of the header line.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .network import ArchSpec, Network, param_shapes

MAGIC = "revode-checkpoint"
_LE_F32 = np.dtype("<f4")


def save_network(path: str | Path, net: Network, extra: dict | None = None) -> None:
    manifest, offset = [], 0
    for name, arr in net.params.items():
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "dtype": "float32"})
        offset += arr.size * 4
    header = {"format": MAGIC, "version": 1, "arch": net.arch.to_dict(), "tensors": manifest}
    if extra:
        header["extra"] = extra
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for arr in net.params.values():
            f.write(np.ascontiguousarray(arr, dtype=_LE_F32).tobytes())


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as f:
        return json.loads(f.readline())


def load_network(path: str | Path, dtype=np.float32) -> Network:
    raw = Path(path).read_bytes()
    cut = raw.index(b"\n") + 1
    header = json.loads(raw[:cut])
    if header.get("format") != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    arch = ArchSpec.from_dict(header["arch"])
    body = memoryview(raw)[cut:]
    params = {}
    for t in header["tensors"]:
        if t["dtype"] != "float32":
            raise ValueError(f"{path}: unsupported dtype {t['dtype']} for {t['name']}")
        count = int(np.prod(t["shape"]))
        end = t["offset"] + 4 * count
        if end > len(body):
            raise ValueError(f"{path}: tensor {t['name']} runs past the end of the file")
        arr = np.frombuffer(body[t["offset"]:end], dtype=_LE_F32).reshape(t["shape"])
        params[t["name"]] = arr.astype(dtype)
    expected = param_shapes(arch)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        unknown = sorted(set(params) - set(expected))
        raise ValueError(f"{path}: parameter mismatch (missing {missing}, unexpected {unknown})")
    for name, shp in expected.items():
        if params[name].shape != shp:
            raise ValueError(f"{path}: {name} has shape {params[name].shape}, architecture expects {shp}")
    return Network(arch, {n: params[n] for n in expected})
