"""Versioned binary checkpoint container.

Byte layout (all integers little-endian):

    magic       8 bytes   b"TSEGCKPT"
    version     uint32    currently 1
    meta_len    uint32    length of the UTF-8 JSON metadata blob
    metadata    meta_len bytes
    n_tensors   uint32
    per tensor:
        name_len  uint16
        name      name_len bytes, UTF-8
        ndim      uint8
        dims      ndim * uint32
        payload   prod(dims) * 4 bytes, row-major float32

Round trips are bit-exact; tensors must already be float32.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import InputError, StructuralError

MAGIC = b"TSEGCKPT"
VERSION = 1


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], metadata: dict) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(meta)))
    chunks.append(meta)
    chunks.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        if arr.dtype != np.float32:
            raise InputError(f"tensor {name!r} must be float32, got {arr.dtype}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(data):
            raise StructuralError("truncated checkpoint file")
        out = data[off : off + n]
        off += n
        return out

    if take(len(MAGIC)) != MAGIC:
        raise InputError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<I", take(4))
    metadata = json.loads(take(meta_len).decode("utf-8"))
    (n_tensors,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        payload = take(4 * count)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    if off != len(data):
        raise StructuralError("trailing bytes after last tensor")
    return tensors, metadata
