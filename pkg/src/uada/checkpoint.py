"""Versioned binary checkpoints.

Layout (little-endian)::

    magic      8 bytes   b"UADACKPT"
    version    uint32
    spec_len   uint32, then spec_len bytes of UTF-8 JSON (the ModelSpec)
    n_tensors  uint32
    per tensor: ndim uint32, ndim x uint32 dims, float32 payload
    checksum   uint64    blake2b-64 over every preceding byte
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .nn import Model, ModelSpec

MAGIC = b"UADACKPT"
VERSION = 1


class CheckpointError(IOError):
    pass


def _digest(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def encode(m: Model) -> bytes:
    spec = json.dumps(m.spec.to_dict(), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(spec)), spec, struct.pack("<I", len(m.params))]
    for p in m.params:
        parts.append(struct.pack("<I", p.ndim))
        parts.append(struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    payload = b"".join(parts)
    return payload + struct.pack("<Q", _digest(payload))


def decode(blob: bytes, name: str = "<bytes>") -> Model:
    if len(blob) < len(MAGIC) + 8 + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{name}: not a checkpoint (bad magic)")
    payload, (stored,) = blob[:-8], struct.unpack("<Q", blob[-8:])
    if _digest(payload) != stored:
        raise CheckpointError(f"{name}: checksum mismatch, file is corrupted")
    off = len(MAGIC)
    version, spec_len = struct.unpack_from("<II", payload, off)
    if version != VERSION:
        raise CheckpointError(f"{name}: unsupported checkpoint version {version} (expected {VERSION})")
    off += 8
    spec = ModelSpec.from_dict(json.loads(payload[off: off + spec_len].decode("utf-8")))
    off += spec_len
    (n,) = struct.unpack_from("<I", payload, off)
    off += 4
    params = []
    for _ in range(n):
        (ndim,) = struct.unpack_from("<I", payload, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", payload, off)
        off += 4 * ndim
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=off).reshape(shape)
        params.append(arr.astype(np.float32))
        off += 4 * count
    if off != len(payload):
        raise CheckpointError(f"{name}: {len(payload) - off} trailing bytes")
    velocity = [np.zeros(p.shape, dtype=np.float64) for p in params]
    return Model(spec, params, velocity)


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_checkpoint(m: Model, path) -> None:
    atomic_write_bytes(path, encode(m))


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        return decode(fh.read(), str(path))
