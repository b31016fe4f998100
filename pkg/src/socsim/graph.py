"""Barabási–Albert networks stored as compressed sparse rows."""

from __future__ import annotations

import hashlib
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np

from socsim.errors import (BadMagic, GraphFileError, InvalidFraction, InvalidParams,
                           TruncatedFile, VersionMismatch)
from socsim.rng import key64

MAGIC = b"LSCG"
VERSION = 1
_HEADER = struct.Struct("<4sHHQQ")
_HASH_LEN = 32


@dataclass(frozen=True)
class BaParams:
    n: int
    m_attach: int = 3
    seed: int = 0

    def validate(self) -> None:
        if not (isinstance(self.n, (int, np.integer)) and isinstance(self.m_attach, (int, np.integer))):
            raise InvalidParams("n and m_attach must be integers")
        if not self.n >= self.m_attach >= 1:
            raise InvalidParams(f"need n >= m_attach >= 1, got n={self.n}, m_attach={self.m_attach}")

    @property
    def edge_count(self) -> int:
        m = self.m_attach
        return m * (m - 1) // 2 + (self.n - m) * m


class CsrGraph:
    """Undirected graph; each edge appears in both endpoints' sorted neighbor rows."""

    def __init__(self, offsets: np.ndarray, neighbors: np.ndarray):
        self.offsets = offsets
        self.neighbors = neighbors

    @property
    def n(self) -> int:
        return len(self.offsets) - 1

    @property
    def m_edges(self) -> int:
        return int(self.offsets[-1]) // 2

    def degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    def neighbors_of(self, v: int) -> np.ndarray:
        if not 0 <= v < self.n:
            raise IndexError(f"node {v} out of range [0, {self.n})")
        return self.neighbors[self.offsets[v]:self.offsets[v + 1]]

    def nbytes(self) -> int:
        return self.offsets.nbytes + self.neighbors.nbytes

    def digest(self) -> bytes:
        h = hashlib.sha256()
        h.update(self.offsets.astype("<u8", copy=False).tobytes())
        h.update(self.neighbors.astype("<u8", copy=False).tobytes())
        return h.digest()

    def __eq__(self, other) -> bool:
        return (isinstance(other, CsrGraph) and np.array_equal(self.offsets, other.offsets)
                and np.array_equal(self.neighbors, other.neighbors))

    def validate(self) -> None:
        """Check the structural invariants; raises AssertionError on violation."""
        off, nb_ = self.offsets, self.neighbors
        assert off[0] == 0 and off[-1] == len(nb_)
        assert np.all(np.diff(off) >= 0)
        assert len(nb_) % 2 == 0
        assert _rows_ok(off, nb_.astype(np.int64))


def id_dtype_for(n: int):
    return np.int32 if n < 2**31 else np.int64


# --------------------------------------------------------------------------
# generation


@nb.njit(cache=True)
def _next(state):
    # splitmix64 step; state is a 1-element uint64 array
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True)
def _ba_nodes(start, stop, m, endpoints, n_end, state, src, dst):
    """Attach nodes [start, stop); writes m edges per node into src/dst.

    Returns the new endpoint count. ``endpoints`` holds every edge endpoint
    so far, so a uniform draw from it is a degree-proportional draw.
    """
    picked = np.empty(m, dtype=np.int64)
    k = 0
    for v in range(start, stop):
        got = 0
        while got < m:
            if n_end == 0:
                # m_attach == 1: the seed "clique" has no edges yet
                t = np.int64(_next(state) % np.uint64(v))
            else:
                u = np.float64(_next(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)
                t = np.int64(endpoints[np.int64(u * n_end)])
            dup = False
            for j in range(got):
                if picked[j] == t:
                    dup = True
                    break
            if not dup:
                picked[got] = t
                got += 1
        for j in range(m):
            src[k] = v
            dst[k] = picked[j]
            k += 1
            endpoints[n_end] = picked[j]
            endpoints[n_end + 1] = v
            n_end += 2
    return n_end


@nb.njit(cache=True)
def _build_csr(n, src, dst, neighbors_out):
    deg = np.zeros(n, dtype=np.int64)
    for i in range(len(src)):
        deg[src[i]] += 1
        deg[dst[i]] += 1
    offsets = np.zeros(n + 1, dtype=np.int64)
    for v in range(n):
        offsets[v + 1] = offsets[v] + deg[v]
    fill = offsets[:-1].copy()
    for i in range(len(src)):
        a, b = src[i], dst[i]
        neighbors_out[fill[a]] = b
        fill[a] += 1
        neighbors_out[fill[b]] = a
        fill[b] += 1
    for v in range(n):
        neighbors_out[offsets[v]:offsets[v + 1]].sort()
    return offsets


@nb.njit(cache=True)
def _rows_ok(offsets, neighbors):
    n = len(offsets) - 1
    for v in range(n):
        prev = -1
        for i in range(offsets[v], offsets[v + 1]):
            u = neighbors[i]
            if u <= prev or u == v or u < 0 or u >= n:
                return False
            prev = u
    return True


def _seed_clique(m, id_dtype):
    pairs = [(j, i) for i in range(m) for j in range(i)]
    src = np.array([p[1] for p in pairs], dtype=id_dtype)
    dst = np.array([p[0] for p in pairs], dtype=id_dtype)
    return src, dst


def _rng_state(seed: int) -> np.ndarray:
    return np.array([key64(seed, "ba_graph")], dtype=np.uint64)


def generate_ba(p: BaParams, id_dtype=None) -> CsrGraph:
    """Preferential-attachment graph with exactly ``p.edge_count`` edges.

    The first ``m_attach`` nodes form a clique; every later node attaches to
    ``m_attach`` distinct earlier nodes drawn from the flat endpoint list
    (duplicates are redrawn).
    """
    p.validate()
    n, m = int(p.n), int(p.m_attach)
    id_dtype = id_dtype or id_dtype_for(n)
    E = p.edge_count
    src = np.empty(E, dtype=id_dtype)
    dst = np.empty(E, dtype=id_dtype)
    c_src, c_dst = _seed_clique(m, id_dtype)
    k0 = len(c_src)
    src[:k0], dst[:k0] = c_src, c_dst
    endpoints = np.empty(2 * E, dtype=id_dtype)
    endpoints[0:2 * k0:2] = c_src
    endpoints[1:2 * k0:2] = c_dst
    _ba_nodes(m, n, m, endpoints, 2 * k0, _rng_state(p.seed), src[k0:], dst[k0:])
    del endpoints
    neighbors = np.empty(2 * E, dtype=id_dtype)
    offsets = _build_csr(n, src, dst, neighbors)
    return CsrGraph(offsets, neighbors)


def top_degree_fraction(g: CsrGraph, frac: float) -> np.ndarray:
    """Ids of the ceil(frac*n) highest-degree nodes, smaller id first on ties, sorted by id."""
    if not (isinstance(frac, (int, float)) and 0 < frac <= 1):
        raise InvalidFraction(f"fraction must be in (0, 1], got {frac!r}")
    k = ceil_count(frac, g.n)
    order = np.argsort(-g.degrees(), kind="stable")
    return np.sort(order[:k])


def ceil_count(frac: float, n: int) -> int:
    # rounding guards against 0.2*n landing a hair above an integer
    return min(n, math.ceil(round(frac * n, 9)))


# --------------------------------------------------------------------------
# file format


def _header(n, m_edges, flags=0):
    return _HEADER.pack(MAGIC, VERSION, flags, n, m_edges)


def save_graph(g: CsrGraph, path) -> None:
    h = hashlib.sha256()
    tmp = Path(str(path) + ".tmp")
    try:
        with open(tmp, "wb") as f:
            for chunk in (_header(g.n, g.m_edges),
                          g.offsets.astype("<u8", copy=False).tobytes(),
                          g.neighbors.astype("<u8", copy=False).tobytes()):
                h.update(chunk)
                f.write(chunk)
            f.write(h.digest())
        os.replace(tmp, path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise GraphFileError(f"cannot write {path}: {exc}") from exc


def load_graph(path, id_dtype=None) -> CsrGraph:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise GraphFileError(f"cannot read {path}: {exc}") from exc
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"{path}: not a graph file")
    if len(data) < _HEADER.size:
        raise TruncatedFile(f"{path}: header truncated")
    _, version, _flags, n, m_edges = _HEADER.unpack_from(data)
    if version != VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {VERSION}")
    body = _HEADER.size + 8 * (n + 1) + 8 * 2 * m_edges
    if len(data) < body + _HASH_LEN:
        raise TruncatedFile(f"{path}: expected {body + _HASH_LEN} bytes, got {len(data)}")
    if hashlib.sha256(data[:body]).digest() != data[body:body + _HASH_LEN]:
        raise GraphFileError(f"{path}: content hash mismatch")
    id_dtype = id_dtype or id_dtype_for(n)
    offsets = np.frombuffer(data, dtype="<u8", count=n + 1, offset=_HEADER.size).astype(np.int64)
    neighbors = np.frombuffer(data, dtype="<u8", count=2 * m_edges,
                              offset=_HEADER.size + 8 * (n + 1)).astype(id_dtype)
    return CsrGraph(offsets, neighbors)


def file_digest(path) -> bytes:
    """The trailing content hash stored in a graph file."""
    with open(path, "rb") as f:
        f.seek(-_HASH_LEN, os.SEEK_END)
        return f.read(_HASH_LEN)


def generate_ba_to_file(p: BaParams, path, chunk_nodes: int = 1 << 22, n_buckets: int = 16,
                        workdir=None) -> None:
    """Out-of-core variant of ``generate_ba`` + ``save_graph``.

    Edges are generated in node chunks and spilled to disk; the CSR is then
    assembled one node-range bucket at a time, so peak memory is the
    endpoint list plus one bucket rather than the whole neighbor array.
    The output file is byte-identical to the in-memory path.
    """
    p.validate()
    n, m = int(p.n), int(p.m_attach)
    E = p.edge_count
    id_dtype = id_dtype_for(n)
    endpoints = np.empty(2 * E, dtype=id_dtype)
    deg = np.zeros(n, dtype=np.int64)
    state = _rng_state(p.seed)
    with tempfile.TemporaryDirectory(dir=workdir) as tmpdir:
        spills = []

        def spill(s, d):
            np.add.at(deg, s, 1)
            np.add.at(deg, d, 1)
            fn = Path(tmpdir) / f"edges_{len(spills):05d}.npy"
            np.save(fn, np.stack([s, d]))
            spills.append(fn)

        c_src, c_dst = _seed_clique(m, id_dtype)
        k0 = len(c_src)
        endpoints[0:2 * k0:2] = c_src
        endpoints[1:2 * k0:2] = c_dst
        n_end = 2 * k0
        if k0:
            spill(c_src, c_dst)
        for start in range(m, n, chunk_nodes):
            stop = min(n, start + chunk_nodes)
            s = np.empty((stop - start) * m, dtype=id_dtype)
            d = np.empty_like(s)
            n_end = _ba_nodes(start, stop, m, endpoints, n_end, state, s, d)
            spill(s, d)
        del endpoints

        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(deg, out=offsets[1:])
        h = hashlib.sha256()
        tmp = Path(str(path) + ".tmp")
        with open(tmp, "wb") as f:
            for chunk in (_header(n, E), offsets.astype("<u8").tobytes()):
                h.update(chunk)
                f.write(chunk)
            bounds = np.linspace(0, n, n_buckets + 1).astype(np.int64)
            for lo, hi in zip(bounds[:-1], bounds[1:]):
                if hi <= lo:
                    continue
                rows_a, rows_b = [], []
                for fn in spills:
                    s, d = np.load(fn)
                    for a, b in ((s, d), (d, s)):
                        sel = (a >= lo) & (a < hi)
                        rows_a.append(a[sel])
                        rows_b.append(b[sel])
                a = np.concatenate(rows_a).astype(np.int64)
                b = np.concatenate(rows_b).astype(np.int64)
                order = np.lexsort((b, a))
                chunk = b[order].astype("<u8").tobytes()
                h.update(chunk)
                f.write(chunk)
            f.write(h.digest())
        os.replace(tmp, path)
