"""Signed feature-hashing prompt embeddings."""

from __future__ import annotations

import hashlib
import re
from functools import lru_cache

import numpy as np

DIM = 256
_TOKEN = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN.split(text.lower()) if t]


@lru_cache(maxsize=1 << 18)
def token_hash(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode(), digest_size=8).digest(), "little")


@lru_cache(maxsize=1 << 18)
def _slot(token: str, dim: int) -> tuple[int, float]:
    h = token_hash(token)
    return h % dim, (1.0 if (h >> 8) & 1 else -1.0)


def embed_prompt(text: str, dim: int = DIM) -> np.ndarray:
    """L2-normalised signed bag-of-tokens vector; zero vector for token-free text.

    Each lowercase alphanumeric token lands in bucket ``hash % dim`` with a
    sign taken from bit 8 of the same hash.
    """
    vec = np.zeros(dim, dtype=np.float64)
    tokens = tokenize(text)
    if not tokens:
        return vec
    slots = [_slot(t, dim) for t in tokens]
    idx = np.fromiter((s[0] for s in slots), dtype=np.int64, count=len(slots))
    sgn = np.fromiter((s[1] for s in slots), dtype=np.float64, count=len(slots))
    vec += np.bincount(idx, weights=sgn, minlength=dim)
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def exact_hash(task_class: str, prompt: str) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(task_class.encode())
    h.update(b"\x00")
    h.update(prompt.encode())
    return int.from_bytes(h.digest(), "little")
