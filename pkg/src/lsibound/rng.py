"""Named, splittable random streams.

Every stream is a Philox generator keyed by ``(seed, name, *index)``. Adding a
new consumer never shifts the draws seen by an existing one, and chunked
work can be spread over workers and still reproduce the serial result.
"""
from __future__ import annotations

import zlib

import numpy as np

GENERATOR_NAME = "numpy.random.Philox"
CHUNK = 1 << 16


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def generator(seed: int, name: str, *index: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_name_key(name), *map(int, index)))
    return np.random.Generator(np.random.Philox(ss))


def subseed(seed: int, name: str, *index: int) -> int:
    """A 63-bit integer seed derived from a named stream, for handing to another component."""
    return int(generator(seed, name, *index).integers(0, 2**63 - 1))


def chunked_standard_normal(seed: int, name: str, n: int, d: int) -> np.ndarray:
    """``(n, d)`` standard normals generated chunk by chunk from derived streams."""
    out = np.empty((n, d))
    for c, start in enumerate(range(0, n, CHUNK)):
        stop = min(start + CHUNK, n)
        out[start:stop] = generator(seed, name, c).standard_normal((stop - start, d))
    return out


def chunked_uniform(seed: int, name: str, n: int) -> np.ndarray:
    out = np.empty(n)
    for c, start in enumerate(range(0, n, CHUNK)):
        stop = min(start + CHUNK, n)
        out[start:stop] = generator(seed, name, c).random(stop - start)
    return out
