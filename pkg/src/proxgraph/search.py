"""Beam search over a proximity graph, plus multi-partition fan-out search.

The traversal keeps one distance-sorted linear buffer of capacity L (the beam
width): repeatedly expand the closest unexpanded entry, evaluate its unseen
out-neighbors, and retain the L closest discovered so far. Every node's
distance is computed at most once per query; evicted nodes are never
re-admitted. Ends when every buffer entry has been expanded.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import Dataset
from .errors import ParameterError
from .graph import Graph, PartitionedIndex
from .metrics import DistanceCounter, batch_euclidean


@dataclass
class SearchStats:
    """Per-query instrumentation; dist_calcs counts unique evaluations only."""

    dist_calcs: int = 0
    hops: int = 0
    wall_ns: int = 0
    seeds_used: int = 0

    def merge(self, other: "SearchStats") -> None:
        self.dist_calcs += other.dist_calcs
        self.hops += other.hops
        self.wall_ns += other.wall_ns
        self.seeds_used += other.seeds_used


@dataclass(frozen=True)
class ResultSet:
    """k (id, distance) answers, ascending by distance, unique ids."""

    ids: np.ndarray
    dists: np.ndarray

    def __len__(self) -> int:
        return self.ids.shape[0]

    def entries(self) -> list[tuple[int, float]]:
        return [(int(i), float(d)) for i, d in zip(self.ids, self.dists)]


def beam_search(g: Graph, ds: Dataset, seeds, q: np.ndarray, k: int,
                L: int) -> tuple[ResultSet, SearchStats]:
    """k approximate nearest neighbors of q using beam width L >= k."""
    seeds = np.asarray(seeds, np.int64).ravel()
    if seeds.size == 0:
        raise ParameterError("seed list must be non-empty")
    if (seeds < 0).any() or (seeds >= g.n).any():
        raise ParameterError("seed id outside [0, n)")
    if not 1 <= k <= L:
        raise ParameterError(f"need 1 <= k <= L, got k={k}, L={L}")
    q = np.asarray(q, np.float64).ravel()
    if q.shape[0] != ds.d:
        raise ParameterError(f"dimension mismatch: query d={q.shape[0]}, dataset d={ds.d}")

    marks = np.zeros(g.n, np.int64)
    start = time.perf_counter_ns()
    ids, dists, size, hops, evals, seeds_used = _kernels.beam_search(
        g.adjacency, g.lengths, ds.values, seeds, q, int(L), marks, 1)
    elapsed = time.perf_counter_ns() - start
    take = min(k, size)
    result = ResultSet(ids[:take].copy(), dists[:take].copy())
    return result, SearchStats(dist_calcs=evals, hops=hops, wall_ns=elapsed,
                               seeds_used=seeds_used)


def search_partitioned(pi: PartitionedIndex, ds: Dataset, q: np.ndarray, k: int,
                       L: int, nprobe: int, seed_indexes,
                       seed_rng=None) -> tuple[ResultSet, SearchStats]:
    """Probe the nprobe partitions whose centroids are closest to q.

    Each probed partition runs its own beam search (seeded by its own seed
    index); results merge into a global top-k. Stats sum the per-partition
    searches plus the centroid-ranking evaluations. seed_rng rebinds the
    random-sample seed stream for this query (see seeds.select_seeds).
    """
    from .seeds import default_want, select_seeds

    if not 1 <= nprobe <= pi.p:
        raise ParameterError(f"need 1 <= nprobe <= {pi.p}, got {nprobe}")
    if not 1 <= k <= L:
        raise ParameterError(f"need 1 <= k <= L, got k={k}, L={L}")
    if len(seed_indexes) != pi.p:
        raise ParameterError("one seed index per partition required")

    start = time.perf_counter_ns()
    q = np.asarray(q, np.float64).ravel()
    centroid_dists = batch_euclidean(q, pi.centroids)
    order = np.argsort(centroid_dists, kind="stable")[:nprobe]

    total = SearchStats(dist_calcs=pi.p)  # centroid ranking evaluations
    merged_ids: list[np.ndarray] = []
    merged_dists: list[np.ndarray] = []
    for j in order:
        part_ds = Dataset(pi.local_values[j] if pi.local_values else
                          ds.values[pi.members[j]])
        si = seed_indexes[j]
        seed_counter = DistanceCounter()
        seeds = select_seeds(si, q, want=default_want(si.strategy, k),
                             counter=seed_counter, rng=seed_rng)
        local_k = min(k, part_ds.n)
        result, stats = beam_search(pi.graphs[j], part_ds, seeds, q, local_k, L)
        total.dist_calcs += stats.dist_calcs + seed_counter.calls
        total.hops += stats.hops
        total.seeds_used += stats.seeds_used
        merged_ids.append(pi.members[j][result.ids])
        merged_dists.append(result.dists)

    all_ids = np.concatenate(merged_ids)
    all_dists = np.concatenate(merged_dists)
    pick = np.lexsort((all_ids, all_dists))[:k]
    total.wall_ns = time.perf_counter_ns() - start
    return ResultSet(all_ids[pick].astype(np.int64), all_dists[pick]), total
