"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"BRCCKPT"                       magic, 7 bytes
    uint32 version
    uint64 n, then n bytes           UTF-8 JSON metadata
    uint32 tensor count
    per tensor:
        uint32 n, then n bytes       UTF-8 name
        uint32 ndim, ndim x uint64   shape
        prod(shape) x float64        raw little-endian data, C order

Metadata carries the config echo, task list, iteration counters and the rng
state; tensors carry weights, optimizer moments, embeddings, tracker state
and replay contents. Loading what was saved gives back identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"BRCCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    meta: dict
    arrays: dict = field(default_factory=dict)
    digest: str = ""


def encode(meta: dict, arrays: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    blob = json.dumps(meta, sort_keys=True).encode()
    parts += [struct.pack("<Q", len(blob)), blob, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        if arr.dtype != np.float64:
            raise CheckpointError(f"tensor {name!r} has dtype {arr.dtype}; checkpoints store float64 only")
        key = name.encode()
        parts += [struct.pack("<I", len(key)), key, struct.pack("<I", arr.ndim)]
        parts += [struct.pack("<Q", d) for d in arr.shape]
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def decode(data: bytes) -> Checkpoint:
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("checkpoint is truncated")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(len(MAGIC))) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    (n,) = struct.unpack("<Q", take(8))
    meta = json.loads(bytes(take(n)).decode())
    (count,) = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        name = bytes(take(n)).decode()
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim)) if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    if pos != len(view):
        raise CheckpointError("trailing bytes after the last tensor")
    return Checkpoint(meta, arrays, hashlib.sha256(data).hexdigest())


def save_checkpoint(path, meta: dict, arrays: dict) -> str:
    """Write a checkpoint and return the SHA-256 of its bytes."""
    data = encode(meta, arrays)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode(fh.read())
