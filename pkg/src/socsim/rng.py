"""Counter-based random streams.

Every stochastic choice is keyed by ``(master_seed, purpose tag, key)`` so the
value drawn for one agent or event never depends on how many draws happened
before it. This is what lets batches run in any order (or in parallel) and
still produce the same run.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache

import numpy as np

_MASK64 = (1 << 64) - 1


@lru_cache(maxsize=4096)
def tag_hash(tag: str) -> int:
    """64-bit hash of a purpose tag."""
    return int.from_bytes(hashlib.blake2b(tag.encode(), digest_size=8).digest(), "little")


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def key64(seed: int, tag: str, key: int = 0) -> int:
    """Derive a 64-bit stream key from (seed, tag, key)."""
    return splitmix64(splitmix64((seed & _MASK64) ^ tag_hash(tag)) ^ (key & _MASK64))


def stream(seed: int, tag: str, key: int = 0) -> np.random.Generator:
    """Independent Philox generator for one (seed, tag, key) triple."""
    k = key64(seed, tag, key)
    return np.random.Generator(np.random.Philox(key=[k, splitmix64(k)]))


def _splitmix64_array(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def counter_bits(seed: int, tag: str, counters) -> np.ndarray:
    """Vectorised 64-bit hash of ``counters`` under (seed, tag)."""
    base = np.uint64(key64(seed, tag))
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _splitmix64_array(_splitmix64_array(c ^ base))


def counter_uniform(seed: int, tag: str, counters) -> np.ndarray:
    """Uniform [0, 1) doubles, one per counter, order independent."""
    bits = counter_bits(seed, tag, counters) >> np.uint64(11)
    return bits.astype(np.float64) * (1.0 / (1 << 53))


def counter_choice(seed: int, tag: str, counters, n: int) -> np.ndarray:
    """Uniform integers in [0, n), one per counter."""
    return np.minimum((counter_uniform(seed, tag, counters) * n).astype(np.int64), n - 1)
