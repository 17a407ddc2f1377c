"""Graph construction: incremental insertion, neighborhood propagation, and
partitioned (divide-and-conquer) builds.

The incremental builder inserts one node at a time: a beam search on the
partial graph collects candidates, a diversification rule prunes them to the
degree cap, and arcs are added in both directions; a neighbor whose list would
overflow is re-pruned over its old list plus the new arc. Every distance
evaluation during construction is counted.
"""

from __future__ import annotations

import dataclasses
import io
import json
import logging
import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import Dataset
from .diversify import NDStrategy
from .errors import FormatError, ParameterError, StorageError
from .graph import (Graph, PartitionedIndex, _pack_graph, _unpack_graph,
                    reachable_fraction, read_index, write_index)
from .metrics import DistanceCounter
from .oracle import GroundTruth
from .seeds import (KDTree, SeedIndex, SeedStrategy, StackedLayers,
                    _kd_candidates, build_seed_index, compute_medoid,
                    sample_level, seed_index_from_blob, seed_index_to_blob)

logger = logging.getLogger("proxgraph")

BUILDERS = ("ii", "np", "dc", "vamana2r")


@dataclass(frozen=True)
class BuildParams:
    max_degree: int = 32  # out-degree cap (R)
    beam_width: int = 128  # construction beam width (L)
    nd: NDStrategy = field(default_factory=lambda: NDStrategy("rnd"))
    ss: SeedStrategy = field(default_factory=lambda: SeedStrategy("ks"))
    seed: int = 0
    insert_order: str = "shuffled"  # or "dataset"

    def __post_init__(self):
        if not 2 <= self.max_degree <= self.beam_width:
            raise ParameterError(
                f"need beam_width >= max_degree >= 2, got "
                f"beam_width={self.beam_width}, max_degree={self.max_degree}")
        if self.insert_order not in ("shuffled", "dataset"):
            raise ParameterError(f"unknown insert order {self.insert_order!r}")


@dataclass(frozen=True)
class NPParams:
    k: int = 10
    iters: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.iters < 0:
            raise ParameterError("need k >= 1 and iters >= 0")


@dataclass
class BuildStats:
    """Construction instrumentation, including diversification accounting.

    prune_ratio_sum accumulates the per-call ratio (considered - kept) /
    considered, where `considered` counts only candidates the greedy scan
    actually examined before hitting the degree cap; candidates never reached
    do not count as pruned.
    """

    dist_calcs: int = 0
    hops: int = 0
    wall_ns: int = 0
    seeds_used: int = 0
    prune_calls: int = 0
    prune_considered: int = 0
    prune_kept: int = 0
    prune_ratio_sum: float = 0.0

    @property
    def mean_prune_ratio(self) -> float:
        return self.prune_ratio_sum / self.prune_calls if self.prune_calls else 0.0

    @property
    def corpus_edge_reduction(self) -> float:
        if not self.prune_considered:
            return 0.0
        return 1.0 - self.prune_kept / self.prune_considered


class _ConstructionSeeder:
    """Seed selection against a partial graph during incremental insertion.

    Only already-inserted nodes are eligible: random samples draw from the
    inserted prefix; fixed-entry strategies fall back to the first inserted
    node until their designated entry joins the graph; tree descents mask
    not-yet-inserted points; stacked layers are co-built, one upper-layer
    insertion before each base-layer insertion.
    """

    def __init__(self, ds: Dataset, g: Graph, params: BuildParams, order: np.ndarray):
        self.ds = ds
        self.graph = g
        self.params = params
        self.order = order
        self.kind = params.ss.kind
        self.inserted = np.zeros(ds.n, bool)
        self.layers: StackedLayers | None = None
        self._sn_rng = None
        if self.kind == "ks":
            self.rng = np.random.default_rng((params.seed, 5))
        elif self.kind == "md":
            self.medoid = compute_medoid(ds)
        elif self.kind == "kd":
            rng = np.random.default_rng((params.seed, 3))
            self.forest = [KDTree.build(ds.values, params.ss.kd_leaf_size, rng)
                           for _ in range(params.ss.kd_trees)]
        elif self.kind == "sn":
            self.layers = StackedLayers(ds.values, params.ss.sn_degree,
                                        max(32, 2 * params.ss.sn_degree))
            self._sn_rng = np.random.default_rng((params.seed, 4))

    def pre_insert(self, v: int) -> tuple[int, int]:
        """Co-build hook run before v's base-layer insertion.

        For stacked layers this performs the upper-layer insertion and returns
        (base entry node, distance evaluations); a no-op for other strategies.
        """
        if self.layers is None:
            return -1, 0
        xi = 1.0 - float(self._sn_rng.random())
        level = sample_level(xi, self.params.ss.sn_degree)
        return self.layers.insert(v, level)

    def seeds_for(self, vec: np.ndarray, inserted_count: int, sn_entry: int,
                  counter: DistanceCounter) -> np.ndarray:
        first = self.order[0]
        if self.kind == "ks":
            want = min(self.params.ss.ks_count, inserted_count)
            picks = self.rng.choice(inserted_count, size=want, replace=False)
            return self.order[picks].astype(np.int64)
        if self.kind == "sf":
            return self._with_neighbors(first)
        if self.kind == "md":
            entry = self.medoid if self.inserted[self.medoid] else first
            return self._with_neighbors(entry)
        if self.kind == "kd":
            found = _kd_candidates(self.forest, self.ds.values, vec,
                                   self.params.beam_width,
                                   self.params.ss.kd_max_visits, counter,
                                   allowed=self.inserted)
            return found if found.size else self._with_neighbors(first)
        # sn: the co-build descent already produced the base entry
        return self._with_neighbors(sn_entry)

    def _with_neighbors(self, entry: int) -> np.ndarray:
        return np.concatenate(([entry], self.graph.neighbors(entry))).astype(np.int64)

    def finish(self, seed_for_index: int) -> SeedIndex:
        """Query-time seed index over the completed graph.

        The co-built stacked layers are reused; every other strategy is built
        fresh against the final graph.
        """
        if self.kind == "sn":
            index = SeedIndex(strategy=self.params.ss, values=self.ds.values,
                              graph=self.graph, rng_seed=seed_for_index)
            index.layers = self.layers
            return index
        return build_seed_index(self.ds, self.graph, self.params.ss, seed_for_index)


def _insertion_order(n: int, params: BuildParams) -> np.ndarray:
    if params.insert_order == "dataset":
        return np.arange(n, dtype=np.int64)
    return np.random.default_rng((params.seed, 0)).permutation(n).astype(np.int64)


def build_ii(ds: Dataset, params: BuildParams,
             check_connectivity: bool = True) -> tuple[Graph, SeedIndex, BuildStats]:
    """Incremental-insertion build over the whole dataset.

    Returns the graph, a query-time seed index for params.ss, and construction
    stats. Deterministic for fixed (dataset, params).
    """
    start = time.perf_counter_ns()
    n = ds.n
    g = Graph.empty(n, params.max_degree)
    order = _insertion_order(n, params)
    seeder = _ConstructionSeeder(ds, g, params, order)
    stats = BuildStats()
    counter = DistanceCounter()
    marks = np.zeros(n, np.int64)
    keep = np.empty(params.max_degree, np.int64)
    keep_dists = np.empty(params.max_degree, np.float64)
    kind = params.nd.kind_code
    alpha = float(params.nd.alpha)
    cos_t = params.nd.cos_threshold

    for i in range(n):
        v = int(order[i])
        sn_entry, sn_evals = seeder.pre_insert(v)
        stats.dist_calcs += sn_evals
        if i == 0:
            seeder.inserted[v] = True
            continue
        vec = ds.values[v].astype(np.float64)
        seeds = seeder.seeds_for(vec, i, sn_entry, counter)
        ids, dists, size, hops, evals, seeds_used = _kernels.beam_search(
            g.adjacency, g.lengths, ds.values, seeds, vec,
            params.beam_width, marks, i)
        nkept, p_evals, considered = _kernels._prune_rows(
            ds.values, ids, dists, params.max_degree, kind, alpha, cos_t,
            keep, keep_dists)
        g.adjacency[v, :nkept] = keep[:nkept]
        g.lengths[v] = nkept
        r_evals, r_calls, r_considered, r_kept, r_ratio = _kernels.connect_reverse(
            g.adjacency, g.lengths, ds.values, v, keep[:nkept], kind, alpha, cos_t)
        seeder.inserted[v] = True

        stats.dist_calcs += evals + p_evals + r_evals
        stats.hops += hops
        stats.seeds_used += seeds_used
        stats.prune_calls += 1 + r_calls
        stats.prune_considered += considered + r_considered
        stats.prune_kept += nkept + r_kept
        stats.prune_ratio_sum += (considered - nkept) / considered + r_ratio

    stats.dist_calcs += counter.calls
    seed_index = seeder.finish(params.seed)
    stats.wall_ns = time.perf_counter_ns() - start

    if check_connectivity and n > 1:
        frac = reachable_fraction(g, compute_medoid(ds))
        if frac < 0.99:
            logger.warning("graph covers only %.4f of nodes from the medoid", frac)
    return g, seed_index, stats


# ---------------------------------------------------------------------------
# neighborhood propagation
# ---------------------------------------------------------------------------


def _random_neighbor_init(ds: Dataset, k: int, seed: int,
                          init_ids: np.ndarray | None) -> tuple[np.ndarray, np.ndarray, int]:
    """Each node gets k distinct random neighbors (or the supplied ids), with
    distances, rows sorted ascending. Returns (ids, dists, evaluations)."""
    n = ds.n
    if init_ids is not None:
        ids = np.asarray(init_ids, np.int64)
        if ids.shape != (n, k):
            raise ParameterError(f"init ids must be shaped ({n}, {k})")
    else:
        rng = np.random.default_rng((seed, 6))
        ids = np.empty((n, k), np.int64)
        for u in range(n):
            picks = rng.choice(n - 1, size=k, replace=False)
            picks[picks >= u] += 1
            ids[u] = picks
    dists = np.empty((n, k), np.float64)
    for u in range(n):
        dists[u] = _kernels.rows_query_dists(ds.values, ids[u],
                                             ds.values[u].astype(np.float64))
        order = np.argsort(dists[u], kind="stable")
        ids[u] = ids[u][order]
        dists[u] = dists[u][order]
    return ids, dists, n * k


def nndescent(ds: Dataset, params: NPParams, counter: DistanceCounter | None = None,
              init_ids: np.ndarray | None = None) -> Graph:
    """Approximate k-NN graph by iterative neighborhood propagation.

    Starts from random neighbor lists (or init_ids) and repeatedly lets every
    pair in a node's local join set (its neighbors and the nodes pointing at
    it) propose each other, keeping each list's k closest. Stops after
    params.iters sweeps or when a sweep changes nothing. Out-degree is
    exactly k.
    """
    if params.k >= ds.n:
        raise ParameterError(f"need k < n, got k={params.k}, n={ds.n}")
    ids, dists, evals = _random_neighbor_init(ds, params.k, params.seed, init_ids)
    if counter is not None:
        counter.add(evals)
    for _ in range(params.iters):
        changes, evals = _kernels.nndescent_sweep(ds.values, ids, dists)
        if counter is not None:
            counter.add(evals)
        if changes == 0:
            break
    g = Graph.empty(ds.n, params.k)
    g.adjacency[:, :] = ids.astype(np.int32)
    g.lengths[:] = params.k
    return g


def knng_recall(g: Graph, gt: GroundTruth, k: int) -> float:
    """Edge agreement between a graph and the exact k-NN graph.

    gt must be the dataset-as-queries table (self excluded) with gt.k >= k.
    """
    if gt.m != g.n:
        raise ParameterError(f"ground truth covers {gt.m} nodes, graph has {g.n}")
    if gt.k < k:
        raise ParameterError(f"ground truth is {gt.k}-deep but k={k} requested")
    hits = 0
    for u in range(g.n):
        hits += np.isin(g.neighbors(u), gt.ids[u, :k], assume_unique=False).sum()
    return hits / (g.n * k)


# ---------------------------------------------------------------------------
# divide and conquer
# ---------------------------------------------------------------------------

_KMEANS_ITERS = 20
_KMEANS_TOL = 1e-4


def _chunked_centroid_dists(values64: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    n = values64.shape[0]
    out = np.empty((n, centroids.shape[0]))
    step = 8192
    for lo in range(0, n, step):
        hi = min(lo + step, n)
        diff = values64[lo:hi, None, :] - centroids[None, :, :]
        out[lo:hi] = np.sqrt(np.einsum("ipj,ipj->ip", diff, diff))
    return out


def _kmeans(values: np.ndarray, p: int, seed: int) -> np.ndarray:
    """Hard k-means assignment: seeded point init, 20 iterations or centroid
    movement below 1e-4; empty clusters reseeded with the worst-fit point."""
    n = values.shape[0]
    values64 = values.astype(np.float64)
    rng = np.random.default_rng((seed, 7))
    centroids = values64[rng.choice(n, size=p, replace=False)].copy()
    assign = np.zeros(n, np.int64)
    for _ in range(_KMEANS_ITERS):
        dists = _chunked_centroid_dists(values64, centroids)
        assign = np.argmin(dists, axis=1)
        for c in range(p):
            if not (assign == c).any():
                worst = int(np.argmax(dists[np.arange(n), assign]))
                assign[worst] = c
        moved = 0.0
        for c in range(p):
            fresh = values64[assign == c].mean(axis=0)
            moved = max(moved, float(np.linalg.norm(fresh - centroids[c])))
            centroids[c] = fresh
        if moved < _KMEANS_TOL:
            break
    return assign


def _rebalance(values64: np.ndarray, assign: np.ndarray, p: int, min_size: int) -> np.ndarray:
    """Steal nearest points from oversized partitions until all reach min_size."""
    assign = assign.copy()
    while True:
        sizes = np.bincount(assign, minlength=p)
        deficient = np.nonzero(sizes < min_size)[0]
        if deficient.size == 0:
            return assign
        c = int(deficient[0])
        centroid = values64[assign == c].mean(axis=0) if sizes[c] else \
            values64.mean(axis=0)
        diff = values64 - centroid
        dist_to_c = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        for candidate in np.argsort(dist_to_c, kind="stable"):
            if sizes[c] >= min_size:
                break
            donor = assign[candidate]
            if donor == c or sizes[donor] <= min_size:
                continue
            assign[candidate] = c
            sizes[donor] -= 1
            sizes[c] += 1


def build_dc(ds: Dataset, partitions: int, params: BuildParams) -> PartitionedIndex:
    """Partition with seeded k-means, then build one graph per partition.

    Partition j builds with seed params.seed + j, so a single partition
    reproduces build_ii exactly. Centroids are the final member means.
    """
    if not 1 <= partitions <= ds.n:
        raise ParameterError(f"need 1 <= partitions <= n, got {partitions}")
    min_size = params.max_degree + 1
    if ds.n < partitions * min_size:
        raise ParameterError(
            f"{partitions} partitions of at least {min_size} members need "
            f"n >= {partitions * min_size}, got {ds.n}")
    values64 = ds.values.astype(np.float64)
    assign = _kmeans(ds.values, partitions, params.seed)
    assign = _rebalance(values64, assign, partitions, min_size)

    members = [np.sort(np.nonzero(assign == c)[0]).astype(np.int64)
               for c in range(partitions)]
    centroids = np.stack([ds.values[m].astype(np.float64).mean(axis=0)
                          for m in members]).astype(np.float32)
    graphs = []
    seed_indexes = []
    local_values = []
    total = BuildStats()
    for j, member_ids in enumerate(members):
        local_ds = Dataset(np.ascontiguousarray(ds.values[member_ids]))
        local_params = dataclasses.replace(params, seed=params.seed + j)
        g, si, stats = build_ii(local_ds, local_params, check_connectivity=False)
        graphs.append(g)
        seed_indexes.append(si)
        local_values.append(local_ds.values)
        total.dist_calcs += stats.dist_calcs
        total.hops += stats.hops
        total.seeds_used += stats.seeds_used
        total.prune_calls += stats.prune_calls
        total.prune_considered += stats.prune_considered
        total.prune_kept += stats.prune_kept
        total.prune_ratio_sum += stats.prune_ratio_sum
        total.wall_ns += stats.wall_ns
    return PartitionedIndex(centroids=centroids, members=members, graphs=graphs,
                            local_values=local_values, seed_indexes=seed_indexes,
                            build_stats=total)


# ---------------------------------------------------------------------------
# two-round refinement preset
# ---------------------------------------------------------------------------


def build_vamana2r(ds: Dataset, params: BuildParams,
                   check_connectivity: bool = True) -> tuple[Graph, SeedIndex, BuildStats]:
    """Two refinement passes over a random base graph of degree ~log2(n).

    Each pass re-selects every node's neighbors via beam search plus
    params.nd pruning (a relaxed rule is the intended setting); reverse-edge
    overflows re-prune with the strict relative rule.
    """
    start = time.perf_counter_ns()
    n = ds.n
    if n < 3:
        raise ParameterError(f"two-round refinement needs n >= 3, got {n}")
    init_degree = max(2, min(params.max_degree, n - 1,
                             math.ceil(math.log2(max(n, 2)))))
    g = Graph.empty(n, params.max_degree)
    rng = np.random.default_rng((params.seed, 8))
    for u in range(n):
        picks = rng.choice(n - 1, size=init_degree, replace=False)
        picks[picks >= u] += 1
        g.set_neighbors(u, picks)

    order = _insertion_order(n, params)
    # stacked layers are a co-build structure; refinement passes seed from a
    # fixed entry instead and the real seed index is built afterwards
    refine_params = params if params.ss.kind != "sn" else \
        dataclasses.replace(params, ss=SeedStrategy("sf"))
    seeder = _ConstructionSeeder(ds, g, refine_params, order)
    seeder.inserted[:] = True  # refinement passes see the whole graph
    stats = BuildStats()
    counter = DistanceCounter()
    marks = np.zeros(n, np.int64)
    keep = np.empty(params.max_degree, np.int64)
    keep_dists = np.empty(params.max_degree, np.float64)
    kind = params.nd.kind_code
    alpha = float(params.nd.alpha)
    cos_t = params.nd.cos_threshold
    tag = 0

    for _pass in range(2):
        for i in range(n):
            v = int(order[i])
            vec = ds.values[v].astype(np.float64)
            seeds = seeder.seeds_for(vec, n, -1, counter)
            seeds = seeds[seeds != v]
            if seeds.size == 0:
                seeds = np.asarray([order[0] if v != order[0] else order[1]], np.int64)
            tag += 1
            ids, dists, size, hops, evals, seeds_used = _kernels.beam_search(
                g.adjacency, g.lengths, ds.values, seeds, vec,
                params.beam_width, marks, tag)
            fresh = ids != v
            ids = ids[fresh]
            dists = dists[fresh]
            nkept, p_evals, considered = _kernels._prune_rows(
                ds.values, ids, dists, params.max_degree, kind, alpha, cos_t,
                keep, keep_dists)
            g.adjacency[v, :nkept] = keep[:nkept]
            g.lengths[v] = nkept
            r_evals, r_calls, r_considered, r_kept, r_ratio = _kernels.connect_reverse(
                g.adjacency, g.lengths, ds.values, v, keep[:nkept],
                _kernels.ND_RELATIVE, 1.0, params.nd.cos_threshold)
            stats.dist_calcs += evals + p_evals + r_evals
            stats.hops += hops
            stats.seeds_used += seeds_used
            stats.prune_calls += 1 + r_calls
            stats.prune_considered += considered + r_considered
            stats.prune_kept += nkept + r_kept
            stats.prune_ratio_sum += ((considered - nkept) / considered if considered else 0.0) + r_ratio

    stats.dist_calcs += counter.calls
    seed_index = build_seed_index(ds, g, params.ss, params.seed)
    stats.wall_ns = time.perf_counter_ns() - start
    if check_connectivity and n > 1:
        frac = reachable_fraction(g, compute_medoid(ds))
        if frac < 0.99:
            logger.warning("graph covers only %.4f of nodes from the medoid", frac)
    return g, seed_index, stats


# ---------------------------------------------------------------------------
# index bundle
# ---------------------------------------------------------------------------


@dataclass
class GraphIndex:
    """A built graph plus its seed index and build metadata, as one artifact."""

    graph: Graph
    seed_index: SeedIndex
    meta: dict

    def save(self, path: str, d: int) -> None:
        write_index(path, self.graph, d, self.meta,
                    seed_index_to_blob(self.seed_index))

    @classmethod
    def load(cls, path: str, ds: Dataset) -> "GraphIndex":
        g, d, meta, blob = read_index(path)
        if d != ds.d:
            raise ParameterError(f"index was built over d={d}, dataset has d={ds.d}")
        if g.n != ds.n:
            raise ParameterError(f"index covers {g.n} rows, dataset has {ds.n}")
        if blob is None:
            raise ParameterError(f"{path} carries no seed index")
        return cls(g, seed_index_from_blob(blob, ds, g), meta)


_PARTITIONED_MAGIC = b"PXGP"


def save_partitioned_index(pi: PartitionedIndex, path: str, d: int, meta: dict) -> None:
    """One file holding every partition: centroids, members, graph, seed blob."""
    from .seeds import _w_arr

    buf = io.BytesIO()
    buf.write(_PARTITIONED_MAGIC)
    buf.write(struct.pack("<I", 1))
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    buf.write(struct.pack("<II", d, len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", pi.p))
    _w_arr(buf, pi.centroids.astype(np.float32))
    for j in range(pi.p):
        _w_arr(buf, pi.members[j].astype(np.int64))
        _pack_graph(buf, pi.graphs[j])
        blob = seed_index_to_blob(pi.seed_indexes[j])
        buf.write(struct.pack("<Q", len(blob)))
        buf.write(blob)
    try:
        with open(path, "wb") as f:
            f.write(buf.getvalue())
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def load_partitioned_index(path: str, ds: Dataset) -> tuple[PartitionedIndex, dict]:
    from .seeds import _r_arr

    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    buf = io.BytesIO(raw)
    if buf.read(4) != _PARTITIONED_MAGIC:
        raise FormatError(f"{path}: not a partitioned index file")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != 1:
        raise FormatError(f"{path}: unsupported version {version}")
    d, meta_len = struct.unpack("<II", buf.read(8))
    if d != ds.d:
        raise ParameterError(f"index was built over d={d}, dataset has d={ds.d}")
    meta = json.loads(buf.read(meta_len).decode())
    (p,) = struct.unpack("<I", buf.read(4))
    centroids = _r_arr(buf)
    members = []
    graphs = []
    local_values = []
    seed_indexes = []
    for _ in range(p):
        member_ids = _r_arr(buf)
        g = _unpack_graph(buf)
        (blob_len,) = struct.unpack("<Q", buf.read(8))
        blob = buf.read(blob_len)
        local_ds = Dataset(np.ascontiguousarray(ds.values[member_ids]))
        members.append(member_ids)
        graphs.append(g)
        local_values.append(local_ds.values)
        seed_indexes.append(seed_index_from_blob(blob, local_ds, g))
    return PartitionedIndex(centroids=centroids, members=members, graphs=graphs,
                            local_values=local_values,
                            seed_indexes=seed_indexes), meta


def build_meta(builder: str, params: BuildParams, n: int, d: int,
               partitions: int | None = None) -> dict:
    meta = {
        "builder": builder,
        "nd": params.nd.spec(),
        "ss": params.ss.spec(),
        "params": {
            "R": params.max_degree,
            "Lbuild": params.beam_width,
            "seed": params.seed,
            "insert_order": params.insert_order,
        },
        "n": n,
        "d": d,
    }
    if partitions is not None:
        meta["params"]["partitions"] = partitions
    return meta
