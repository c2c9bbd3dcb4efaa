"""Versioned checkpoint container.

Layout: 4-byte magic, u32 format version, u64 manifest length, UTF-8 JSON
manifest, then raw little-endian tensor buffers concatenated in manifest
order. The manifest stores name/dtype/shape/offset per tensor plus
arbitrary JSON metadata (config snapshot, iteration, rng states). Writing
is deterministic -- sorted tensor names, canonical JSON -- so
save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import torch

MAGIC = b"SSIR"
FORMAT_VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"),
           "<i8": np.dtype("<i8")}


class CheckpointError(RuntimeError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def _to_numpy(t) -> np.ndarray:
    if torch.is_tensor(t):
        t = t.detach().cpu().numpy()
    arr = np.asarray(t)
    code = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}.get(str(arr.dtype))
    if code is None:
        raise CheckpointError(f"unsupported tensor dtype {arr.dtype}")
    out = np.ascontiguousarray(arr.astype(_DTYPES[code], copy=False))
    return out.reshape(arr.shape)  # ascontiguousarray promotes 0-d to 1-d


def save_checkpoint(path: str | os.PathLike, tensors: dict, meta: dict):
    """Write named tensors plus JSON metadata to a container file."""
    entries = []
    arrays = []
    offset = 0
    for name in sorted(tensors):
        arr = _to_numpy(tensors[name])
        entries.append({"name": name, "dtype": arr.dtype.str,
                        "shape": list(arr.shape), "offset": offset,
                        "nbytes": arr.nbytes})
        arrays.append(arr)
        offset += arr.nbytes
    manifest = json.dumps({"format_version": FORMAT_VERSION, "meta": meta,
                           "tensors": entries},
                          sort_keys=True, separators=(",", ":")).encode()
    tmp = Path(path).with_suffix(Path(path).suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(FORMAT_VERSION.to_bytes(4, "little"))
        f.write(len(manifest).to_bytes(8, "little"))
        f.write(manifest)
        for arr in arrays:
            f.write(arr.tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike,
                    expected_shapes: dict | None = None):
    """Read a container; returns (tensors, meta) with torch CPU tensors.

    Validates the magic, the format version, and every tensor's byte count;
    when expected_shapes is given, each listed tensor's shape is checked and
    a mismatch error names the offending weight.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container")
    version = int.from_bytes(blob[4:8], "little")
    if version > FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: format version {version} is newer than supported "
            f"({FORMAT_VERSION})")
    mlen = int.from_bytes(blob[8:16], "little")
    header_end = 16 + mlen
    if len(blob) < header_end:
        raise CheckpointError(f"{path}: truncated manifest")
    manifest = json.loads(blob[16:header_end].decode())
    payload = blob[header_end:]
    tensors = {}
    for e in manifest["tensors"]:
        dtype = _DTYPES.get(e["dtype"])
        if dtype is None:
            raise CheckpointError(f"{path}: unknown dtype {e['dtype']}")
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise CheckpointError(f"{path}: truncated payload at {e['name']}")
        arr = np.frombuffer(payload[e["offset"]:end], dtype=dtype)
        if arr.size != int(np.prod(e["shape"], dtype=np.int64)):
            raise ShapeMismatchError(
                f"{path}: {e['name']}: manifest shape {e['shape']} does not "
                f"match the stored buffer")
        arr = arr.reshape(e["shape"])
        if expected_shapes is not None and e["name"] in expected_shapes:
            want = tuple(expected_shapes[e["name"]])
            if tuple(arr.shape) != want:
                raise ShapeMismatchError(
                    f"{path}: {e['name']}: shape {tuple(arr.shape)} does not "
                    f"match expected {want}")
        tensors[e["name"]] = torch.from_numpy(arr.copy())
    return tensors, manifest["meta"]
