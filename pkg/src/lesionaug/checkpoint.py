"""Versioned checkpoint container.

Layout: 8-byte magic ``LAUGCKPT``, little-endian uint16 version, uint32 header
length, a UTF-8 JSON header, then the raw little-endian tensor payloads in the
order the header lists them. The header carries the component tag, config,
epoch, val_score and one ``{name, shape, dtype, offset, nbytes}`` per tensor.
"""

from __future__ import annotations

import json
import os
import struct
from typing import Any, Mapping

import numpy as np

MAGIC = b"LAUGCKPT"
VERSION = 1
COMPONENTS = ("segmenter", "S-Model", "C-Model", "generator", "discriminator")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: os.PathLike, tensors: Mapping[str, np.ndarray], *, component: str,
                    config: Mapping[str, Any], epoch: int = 0, val_score: float | None = None,
                    meta: Mapping[str, Any] | None = None) -> None:
    if component not in COMPONENTS:
        raise CheckpointError(f"unknown component tag {component!r}")
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        blob = arr.astype(dtype, copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype.str,
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {"component": component, "config": dict(config), "epoch": int(epoch),
              "val_score": val_score, "meta": dict(meta or {}), "tensors": entries}
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(header, tensors)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<HI", data, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    start = len(MAGIC) + struct.calcsize("<HI")
    header = json.loads(data[start:start + hlen].decode("utf-8"))
    payload = memoryview(data)[start + hlen:]
    tensors = {}
    for e in header["tensors"]:
        chunk = payload[e["offset"]:e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {e['name']}")
        tensors[e["name"]] = np.frombuffer(chunk, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header, tensors
