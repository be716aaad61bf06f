"""Seed fan-out.

Every random stream is ``SeedSequence(master, spawn_key=keys)`` where ``keys``
is a tuple of non-negative ints. String keys (method names, stage names) are
mapped to ints with CRC32 so that adding or removing one method never shifts
the stream of another.
"""

import zlib

import numpy as np


def _key(k):
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    k = int(k)
    if k < 0:
        raise ValueError("stream keys must be non-negative")
    return k


def stream(seed, *keys):
    """Independent ``Generator`` for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed, *keys):
    """Integer seed derived from ``(seed, *keys)``; usable as a new master seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
