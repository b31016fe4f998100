"""Semantic prompt cache.

Lookup is two-tier: an exact hash of (task class, rendered prompt), then a
nearest-neighbour search by cosine similarity over stored embeddings. Below
``bucket_threshold`` entries the search is a brute-force scan. Above it,
entries are partitioned into 16 cells by the signs of 4 seeded random
hyperplanes, and a query probes every cell it could share a >= tau neighbour
with: if the query's distance to a hyperplane exceeds sqrt(1 - tau**2), no
vector within cosine tau can lie on the other side, so that side is skipped.
Any hit at or above tau is therefore found by both paths.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from socsim.inference.embedding import DIM
from socsim.inference.types import InferenceResponse
from socsim.rng import stream

log = logging.getLogger(__name__)

_N_PLANES = 4
_FILE_MAGIC = b"LSPC"
_FILE_HEADER = struct.Struct("<4sHHIf")


@dataclass
class CacheEntry:
    exact_hash: int
    response: InferenceResponse | None  # None while the first request is still in flight
    hits: int = 0
    inserted_at: int = 0
    pending: int | None = None

    @property
    def ready(self) -> bool:
        return self.response is not None


@dataclass
class LookupResult:
    entry: CacheEntry | None
    similarity: float
    row: int = -1

    @property
    def hit(self) -> bool:
        return self.entry is not None


class SemanticCache:
    def __init__(self, dim: int = DIM, tau: float = 0.95, capacity: int = 1_000_000,
                 bucket_threshold: int = 50_000, seed: int = 0):
        self.dim = dim
        self.tau = tau
        self.capacity = capacity
        self.bucket_threshold = bucket_threshold
        planes = stream(seed, "cache_hyperplanes").standard_normal((_N_PLANES, dim))
        self._planes = planes / np.linalg.norm(planes, axis=1, keepdims=True)
        self._vecs = np.zeros((min(capacity, 1024), dim), dtype=np.float32)
        self._entries: list[CacheEntry] = []
        self._by_hash: dict[int, int] = {}
        self._cell_of = np.zeros(len(self._vecs), dtype=np.int64)
        self._cells: list[set[int]] = [set() for _ in range(1 << _N_PLANES)]
        self._insert_order = 0
        self._order = np.zeros(len(self._vecs), dtype=np.int64)
        self.hits = 0
        self.misses = 0
        self.evictions = 0

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def bucketed(self) -> bool:
        return len(self) >= self.bucket_threshold

    def _cell(self, v: np.ndarray) -> int:
        bits = (self._planes @ v) >= 0
        return int(np.dot(bits, 1 << np.arange(_N_PLANES)))

    def _probe_cells(self, q: np.ndarray) -> list[int]:
        proj = self._planes @ q
        margin = np.sqrt(max(0.0, 1.0 - self.tau ** 2))
        cells = [0]
        for i, p in enumerate(proj):
            sides = [p >= 0] if abs(p) > margin else [False, True]
            cells = [c | (int(s) << i) for c in cells for s in sides]
        return cells

    def search(self, q: np.ndarray, bucketed: bool | None = None) -> tuple[int, float]:
        """Best (row, cosine) among stored vectors; (-1, -inf) when none qualifies."""
        n = len(self)
        if n == 0 or not np.any(q):
            return -1, float("-inf")
        if bucketed is None:
            bucketed = self.bucketed
        if bucketed:
            rows = sorted(set().union(*(self._cells[c] for c in self._probe_cells(q))))
            if not rows:
                return -1, float("-inf")
            rows = np.asarray(rows, dtype=np.int64)
            sims = self._vecs[rows] @ q.astype(np.float32)
            k = int(np.argmax(sims))
            return int(rows[k]), float(sims[k])
        sims = self._vecs[:n] @ q.astype(np.float32)
        k = int(np.argmax(sims))
        return k, float(sims[k])

    def lookup(self, exact_hash: int, embedding: np.ndarray) -> LookupResult:
        row = self._by_hash.get(exact_hash)
        if row is not None:
            return self._hit(row, 1.0)
        row, sim = self.search(embedding)
        if row >= 0 and sim >= self.tau:
            return self._hit(row, sim)
        self.misses += 1
        return LookupResult(None, sim)

    def _hit(self, row: int, sim: float) -> LookupResult:
        e = self._entries[row]
        e.hits += 1
        self.hits += 1
        return LookupResult(e, sim, row)

    def insert(self, exact_hash: int, embedding: np.ndarray, response: InferenceResponse | None,
               tick: int = 0, pending: int | None = None) -> CacheEntry:
        if exact_hash in self._by_hash:
            e = self._entries[self._by_hash[exact_hash]]
            if response is not None:
                e.response, e.pending = response, None
            return e
        if len(self) >= self.capacity:
            self._evict()
        row = len(self._entries)
        if row >= len(self._vecs):
            self._grow()
        self._vecs[row] = embedding
        e = CacheEntry(exact_hash, response, inserted_at=tick, pending=pending)
        self._entries.append(e)
        self._by_hash[exact_hash] = row
        cell = self._cell(embedding)
        self._cell_of[row] = cell
        self._cells[cell].add(row)
        self._order[row] = self._insert_order
        self._insert_order += 1
        return e

    def fill(self, exact_hash: int, response: InferenceResponse) -> None:
        row = self._by_hash.get(exact_hash)
        if row is not None:
            e = self._entries[row]
            e.response, e.pending = response, None

    def remove(self, exact_hash: int) -> None:
        row = self._by_hash.get(exact_hash)
        if row is not None:
            self._remove_row(row)

    def _grow(self):
        new = min(self.capacity, max(2 * len(self._vecs), 1))
        self._vecs = np.resize(self._vecs, (new, self.dim))
        self._cell_of = np.resize(self._cell_of, new)
        self._order = np.resize(self._order, new)

    def _evict(self):
        # fewest hits first, then oldest
        hits = np.array([e.hits for e in self._entries])
        ins = np.array([e.inserted_at for e in self._entries])
        row = int(np.lexsort((self._order[:len(self)], ins, hits))[0])
        self._remove_row(row)
        self.evictions += 1

    def _remove_row(self, row: int):
        last = len(self._entries) - 1
        e = self._entries[row]
        del self._by_hash[e.exact_hash]
        self._cells[self._cell_of[row]].discard(row)
        if row != last:
            moved = self._entries[last]
            self._cells[self._cell_of[last]].discard(last)
            self._entries[row] = moved
            self._vecs[row] = self._vecs[last]
            self._cell_of[row] = self._cell_of[last]
            self._order[row] = self._order[last]
            self._cells[self._cell_of[row]].add(row)
            self._by_hash[moved.exact_hash] = row
        self._entries.pop()

    def embeddings(self) -> np.ndarray:
        return self._vecs[:len(self)]

    def entries(self) -> list[CacheEntry]:
        return list(self._entries)

    def stats(self) -> dict:
        total = self.hits + self.misses
        return {"entries": len(self), "hits": self.hits, "misses": self.misses,
                "hit_rate": self.hits / total if total else 0.0, "evictions": self.evictions,
                "tau": self.tau, "dim": self.dim, "bucketed": self.bucketed}

    # persistence: header, then per entry u32 length + (u64 hash, dim*f32, json response)
    def save(self, path) -> None:
        with open(path, "wb") as f:
            ready = [(r, e) for r, e in enumerate(self._entries) if e.ready]
            f.write(_FILE_HEADER.pack(_FILE_MAGIC, 1, 0, self.dim, self.tau))
            for row, e in ready:
                body = json.dumps({**e.response.to_record(), "hits": e.hits,
                                   "inserted_at": e.inserted_at}).encode()
                rec = struct.pack("<Q", e.exact_hash) + self._vecs[row].astype("<f4").tobytes() + body
                f.write(struct.pack("<I", len(rec)))
                f.write(rec)

    @classmethod
    def load(cls, path, **kwargs) -> "SemanticCache":
        data = Path(path).read_bytes()
        magic, _version, _flags, dim, tau = _FILE_HEADER.unpack_from(data)
        if magic != _FILE_MAGIC:
            raise ValueError(f"{path}: not a cache file")
        kwargs.setdefault("tau", tau)
        cache = cls(dim=dim, **kwargs)
        pos = _FILE_HEADER.size
        while pos < len(data):
            (length,) = struct.unpack_from("<I", data, pos)
            pos += 4
            (h,) = struct.unpack_from("<Q", data, pos)
            vec = np.frombuffer(data, dtype="<f4", count=dim, offset=pos + 8)
            rec = json.loads(data[pos + 8 + 4 * dim:pos + length])
            hits, ins = rec.pop("hits"), rec.pop("inserted_at")
            e = cache.insert(h, vec, InferenceResponse.from_record(rec), tick=ins)
            e.hits = hits
            pos += length
        return cache
