"""Capped-degree directed adjacency structure, diagnostics, and the index file.

Adjacency is stored as one fixed-capacity int32 block of shape (n, max_degree)
with per-node lengths: direct row access, no per-node allocations. The index
file is little-endian: a header (magic, version, n, d, max degree, a JSON meta
blob carrying builder/diversification/seed tags and parameters), the packed
adjacency, and an optional opaque seed-index blob.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DataError, FormatError, ParameterError, StorageError

_MAGIC = b"PXGI"
_VERSION = 1


class Graph:
    """Directed graph over node ids 0..n-1 with out-degree capped at max_degree."""

    __slots__ = ("adjacency", "lengths")

    def __init__(self, adjacency: np.ndarray, lengths: np.ndarray):
        self.adjacency = adjacency
        self.lengths = lengths

    @classmethod
    def empty(cls, n: int, max_degree: int) -> "Graph":
        if n < 1 or max_degree < 1:
            raise ParameterError(f"need n >= 1 and max_degree >= 1, got {n}, {max_degree}")
        return cls(np.full((n, max_degree), -1, np.int32), np.zeros(n, np.int32))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def max_degree(self) -> int:
        return self.adjacency.shape[1]

    def neighbors(self, u: int) -> np.ndarray:
        return self.adjacency[u, : self.lengths[u]]

    def set_neighbors(self, u: int, ids: np.ndarray) -> None:
        ids = np.asarray(ids, np.int32)
        if ids.shape[0] > self.max_degree:
            raise ParameterError(f"{ids.shape[0]} neighbors exceed cap {self.max_degree}")
        self.adjacency[u, : ids.shape[0]] = ids
        self.lengths[u] = ids.shape[0]

    def edge_count(self) -> int:
        return int(self.lengths.sum())

    def check_invariants(self) -> None:
        """Degree cap, no self-loops, no duplicate out-neighbors, ids in range."""
        if (self.lengths > self.max_degree).any() or (self.lengths < 0).any():
            raise DataError("out-degree outside [0, max_degree]")
        for u in range(self.n):
            nbrs = self.neighbors(u)
            if nbrs.size == 0:
                continue
            if (nbrs < 0).any() or (nbrs >= self.n).any():
                raise DataError(f"node {u} has an out-of-range neighbor")
            if (nbrs == u).any():
                raise DataError(f"node {u} has a self-loop")
            if np.unique(nbrs).size != nbrs.size:
                raise DataError(f"node {u} has duplicate out-neighbors")


def reachable_fraction(g: Graph, entry: int) -> float:
    """Fraction of nodes reachable from entry by a directed traversal."""
    if not 0 <= entry < g.n:
        raise ParameterError(f"entry {entry} outside [0, {g.n})")
    return _kernels.reachable_count(g.adjacency, g.lengths, int(entry)) / g.n


def degree_stats(g: Graph) -> tuple[int, float, int]:
    """(min, mean, max) out-degree over all nodes."""
    if g.n == 0:
        return 0, 0.0, 0
    return int(g.lengths.min()), float(g.lengths.mean()), int(g.lengths.max())


@dataclass
class PartitionedIndex:
    """Disjoint partitions covering 0..n-1, each with a centroid and its own graph."""

    centroids: np.ndarray  # (p, d) float32
    members: list[np.ndarray]  # global row ids per partition, ascending
    graphs: list[Graph]  # over local ids (positions within members)
    local_values: list[np.ndarray] = field(default_factory=list, repr=False)
    seed_indexes: list | None = field(default=None, repr=False)
    build_stats: object = field(default=None, repr=False)

    @property
    def p(self) -> int:
        return len(self.members)

    def check_invariants(self, n: int) -> None:
        counts = np.zeros(n, np.int64)
        for part in self.members:
            if part.size == 0:
                raise DataError("empty partition")
            counts[part] += 1
        if not (counts == 1).all():
            raise DataError("partitions must be disjoint and cover every row")


# ---------------------------------------------------------------------------
# index file
# ---------------------------------------------------------------------------


def _pack_graph(buf: io.BytesIO, g: Graph) -> None:
    buf.write(struct.pack("<QI", g.n, g.max_degree))
    buf.write(g.lengths.astype("<i4").tobytes())
    packed = np.concatenate([g.neighbors(u) for u in range(g.n)]) if g.n else np.empty(0, np.int32)
    buf.write(struct.pack("<Q", packed.shape[0]))
    buf.write(packed.astype("<i4").tobytes())


def _unpack_graph(buf: io.BytesIO) -> Graph:
    n, max_degree = struct.unpack("<QI", buf.read(12))
    lengths = np.frombuffer(buf.read(4 * n), "<i4").astype(np.int32)
    (total,) = struct.unpack("<Q", buf.read(8))
    packed = np.frombuffer(buf.read(4 * total), "<i4")
    if int(lengths.sum()) != total:
        raise FormatError("adjacency payload does not match recorded lengths")
    g = Graph.empty(n, max_degree)
    offset = 0
    for u in range(n):
        ln = int(lengths[u])
        g.adjacency[u, :ln] = packed[offset:offset + ln]
        offset += ln
    g.lengths = lengths
    return g


def graph_bytes(g: Graph) -> bytes:
    """Canonical serialized form of the adjacency; used for identity checks."""
    buf = io.BytesIO()
    _pack_graph(buf, g)
    return buf.getvalue()


def write_index(path: str, g: Graph, d: int, meta: dict,
                seed_blob: bytes | None = None) -> None:
    """Write graph + metadata (+ optional seed-index blob) to one index file."""
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _VERSION))
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    buf.write(struct.pack("<I", d))
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    _pack_graph(buf, g)
    if seed_blob is None:
        buf.write(b"\x00")
    else:
        buf.write(b"\x01")
        buf.write(struct.pack("<Q", len(seed_blob)))
        buf.write(seed_blob)
    try:
        with open(path, "wb") as f:
            f.write(buf.getvalue())
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def read_index(path: str) -> tuple[Graph, int, dict, bytes | None]:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    buf = io.BytesIO(raw)
    if buf.read(4) != _MAGIC:
        raise FormatError(f"{path}: not an index file")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported index version {version}")
    (d,) = struct.unpack("<I", buf.read(4))
    (meta_len,) = struct.unpack("<I", buf.read(4))
    meta = json.loads(buf.read(meta_len).decode())
    g = _unpack_graph(buf)
    flag = buf.read(1)
    seed_blob = None
    if flag == b"\x01":
        (blob_len,) = struct.unpack("<Q", buf.read(8))
        seed_blob = buf.read(blob_len)
    return g, d, meta, seed_blob
