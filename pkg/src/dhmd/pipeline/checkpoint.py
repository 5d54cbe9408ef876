"""Checkpoint container: magic header + JSON blob index + float32 data.

Layout: ``DHMDCKPT`` magic, u32 version, u32 header length, UTF-8 JSON header
(blob names/shapes plus metadata), then the named blobs as little-endian
float32 in header order.
"""

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DHMDCKPT"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, arrays, meta):
    blobs = [{"name": name, "shape": list(arr.shape)} for name, arr in arrays.items()]
    header = json.dumps({"blobs": blobs, "meta": meta}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = p.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic (expected {MAGIC!r})")
    version, header_len = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    off = 16 + header_len
    arrays = {}
    for blob in header["blobs"]:
        shape = tuple(blob["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
        off += 4 * count
        arrays[blob["name"]] = arr.reshape(shape).astype(np.float64)
    return arrays, header["meta"]
