"""Named, indexable RNG substreams derived from one master seed."""

from __future__ import annotations

import zlib

import numpy as np


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(master_seed: int, name: str, *indices: int) -> np.random.Generator:
    """Return an independent generator for ``(name, *indices)``.

    Streams with different names or indices never share state, so the order
    in which callers create or consume them cannot change any draw.
    """
    key = (_name_key(name),) + tuple(int(i) for i in indices)
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(master_seed: int, name: str, *indices: int) -> int:
    """A 32-bit integer seed for components that take a plain int."""
    key = (_name_key(name),) + tuple(int(i) for i in indices)
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint32)[0])
