"""Portable named-tensor checkpoints.

Layout: 8-byte magic ``DOTACKP1``, u64 little-endian header length, a UTF-8
JSON header, then the raw tensor payload. The header lists every tensor's
name, shape, dtype (``<f4`` or ``<f8``) and byte offset into the payload,
plus an arbitrary JSON config block, so files are readable without this
library. High-precision (float64) training saves ``<f8`` so reloaded
parameters reproduce logits bit-exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"DOTACKP1"
_DTYPES = {"<f4", "<f8"}


class CheckpointError(Exception):
    pass


def save_checkpoint(path, params: dict[str, np.ndarray], config: dict, dtype: str | None = None) -> None:
    """Write parameters plus a JSON config block.

    ``dtype`` forces the payload precision (``"<f4"`` or ``"<f8"``); by
    default each tensor keeps its own precision.
    """
    if dtype is not None and dtype not in _DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")
    tensors = []
    blobs = []
    offset = 0
    for name, arr in params.items():
        dt = dtype or ("<f4" if arr.dtype == np.float32 else "<f8")
        blob = np.ascontiguousarray(arr, dtype=dt).tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": dt, "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"version": 1, "config": config, "tensors": tensors}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back (params, config); tensor dtypes are preserved."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (magic {magic!r})")
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode("utf-8"))
        payload = f.read()
    if header.get("version") != 1:
        raise CheckpointError(f"{path}: unsupported checkpoint version")
    params: dict[str, np.ndarray] = {}
    for t in header["tensors"]:
        dt = np.dtype(t["dtype"])
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        start = t["offset"]
        end = start + count * dt.itemsize
        if end > len(payload):
            raise CheckpointError(f"{path}: truncated payload for tensor {t['name']!r}")
        arr = np.frombuffer(payload[start:end], dtype=dt).reshape(t["shape"])
        params[t["name"]] = arr.astype(np.float64) if dt == np.dtype("<f8") else arr.astype(np.float32)
    return params, header["config"]
