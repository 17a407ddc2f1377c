"""Seed selection: choosing the nodes where beam searches start.

Five strategies, one interface:

  sf  one seeded random node, fixed for the index lifetime; it and its
      out-neighbors are the seeds
  md  like sf but the entry is the medoid (approximated by the row nearest
      the arithmetic centroid)
  ks  per-query random sample of distinct node ids
  kd  a forest of randomized K-D trees; a budget-bounded best-bin-first
      descent returns the closest points it evaluated
  sn  stacked sparse layers over nested node samples; a greedy descent from
      the fixed top entry walks layer by layer down to the base graph

Seed indexes are immutable after construction and serialize into the index
file. Per-query randomness (ks) can be rebound by passing an explicit
generator so concurrent or repeated runs stay deterministic.
"""

from __future__ import annotations

import heapq
import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import Dataset
from .errors import FormatError, ParameterError
from .graph import Graph
from .metrics import DistanceCounter, batch_euclidean

SS_KINDS = ("sf", "md", "ks", "kd", "sn")

_RND_CODE = _kernels.ND_RELATIVE
_COS60 = math.cos(math.radians(60.0))


@dataclass(frozen=True)
class SeedStrategy:
    kind: str = "ks"
    ks_count: int = 32
    ks_with_medoid: bool = False
    kd_trees: int = 1
    kd_leaf_size: int = 32
    kd_max_visits: int = 512
    sn_degree: int = 32

    def __post_init__(self):
        if self.kind not in SS_KINDS:
            raise ParameterError(f"unknown seed strategy {self.kind!r}")
        if self.ks_count < 1:
            raise ParameterError(f"ks sample count must be >= 1, got {self.ks_count}")
        if self.kd_trees < 1:
            raise ParameterError(f"need at least one tree, got {self.kd_trees}")
        if self.kd_leaf_size < 1 or self.kd_max_visits < 1:
            raise ParameterError("kd leaf size and visit budget must be >= 1")
        if self.sn_degree < 4:
            raise ParameterError(f"layer degree must be >= 4, got {self.sn_degree}")

    def spec(self) -> str:
        if self.kind == "ks":
            tail = f"ks:k={self.ks_count}"
            return tail + ",medoid=1" if self.ks_with_medoid else tail
        if self.kind == "kd":
            return (f"kd:trees={self.kd_trees},leaf={self.kd_leaf_size},"
                    f"visits={self.kd_max_visits}")
        if self.kind == "sn":
            return f"sn:M={self.sn_degree}"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "SeedStrategy":
        """Parse sf | md | ks:k=32[,medoid=1] | kd:trees=1,visits=512[,leaf=32] | sn:M=32."""
        head, _, tail = text.strip().partition(":")
        head = head.lower()
        args = {}
        if tail:
            for item in tail.split(","):
                key, _, value = item.partition("=")
                if not value:
                    raise ParameterError(f"bad strategy argument {item!r} in {text!r}")
                args[key.strip()] = value.strip()
        try:
            if head == "ks":
                return cls("ks", ks_count=int(args.pop("k", 32)),
                           ks_with_medoid=args.pop("medoid", "0") in ("1", "true", "yes"))
            if head == "kd":
                return cls("kd", kd_trees=int(args.pop("trees", 1)),
                           kd_leaf_size=int(args.pop("leaf", 32)),
                           kd_max_visits=int(args.pop("visits", 512)))
            if head == "sn":
                return cls("sn", sn_degree=int(args.pop("M", 32)))
        except ValueError as exc:
            raise ParameterError(f"bad numeric value in {text!r}") from exc
        if head in ("sf", "md"):
            if args:
                raise ParameterError(f"{head} takes no arguments, got {text!r}")
            return cls(head)
        raise ParameterError(f"unknown seed strategy {text!r}")


def sample_level(xi: float, degree: int) -> int:
    """Map a uniform draw xi in (0, 1] to a stacked-layer level.

    floor(-ln(xi) / ln(degree / 2)): xi = 1 lands on level 0, smaller draws
    exponentially rarely land higher.
    """
    if not 0 < xi <= 1:
        raise ParameterError(f"xi must be in (0, 1], got {xi}")
    if degree < 4:
        raise ParameterError(f"degree must be >= 4, got {degree}")
    return int(math.floor(-math.log(xi) / math.log(degree / 2.0)))


def compute_medoid(ds: Dataset) -> int:
    """Row nearest the arithmetic centroid; ties go to the smaller id.

    A stand-in for the exact medoid, which would cost a full pairwise scan.
    """
    centroid = ds.values.astype(np.float64).mean(axis=0)
    dists = batch_euclidean(centroid, ds.values)
    return int(np.argmin(dists))


# ---------------------------------------------------------------------------
# randomized K-D forest
# ---------------------------------------------------------------------------

_TOP_VARIANCE_POOL = 5  # split dimension drawn among this many highest-variance dims


class KDTree:
    """Array-backed K-D tree: median splits on a random high-variance dimension."""

    __slots__ = ("dims", "vals", "left", "right", "start", "count", "ids")

    def __init__(self, dims, vals, left, right, start, count, ids):
        self.dims = dims
        self.vals = vals
        self.left = left
        self.right = right
        self.start = start
        self.count = count
        self.ids = ids

    @classmethod
    def build(cls, values: np.ndarray, leaf_size: int, rng: np.random.Generator) -> "KDTree":
        n, d = values.shape
        ids = np.arange(n, dtype=np.int64)
        dims: list[int] = []
        vals: list[float] = []
        left: list[int] = []
        right: list[int] = []
        start: list[int] = []
        count: list[int] = []

        def split(lo: int, hi: int) -> int:
            node = len(dims)
            dims.append(-1)
            vals.append(0.0)
            left.append(-1)
            right.append(-1)
            start.append(lo)
            count.append(hi - lo)
            if hi - lo <= leaf_size:
                return node
            sub = values[ids[lo:hi]]
            variances = sub.var(axis=0)
            pool = np.argsort(-variances, kind="stable")[:min(_TOP_VARIANCE_POOL, d)]
            dim = int(pool[rng.integers(pool.shape[0])])
            order = np.argsort(sub[:, dim], kind="stable")
            ids[lo:hi] = ids[lo:hi][order]
            mid = (hi - lo) // 2
            dims[node] = dim
            vals[node] = float(values[ids[lo + mid], dim])
            left[node] = split(lo, lo + mid)
            right[node] = split(lo + mid, hi)
            return node

        split(0, n)
        return cls(np.asarray(dims, np.int32), np.asarray(vals, np.float64),
                   np.asarray(left, np.int32), np.asarray(right, np.int32),
                   np.asarray(start, np.int64), np.asarray(count, np.int64), ids)


def _kd_candidates(forest: list[KDTree], values: np.ndarray, q: np.ndarray, want: int,
                   budget: int, counter: DistanceCounter | None,
                   allowed: np.ndarray | None = None) -> np.ndarray:
    """Best-bin-first over the whole forest, stopping after `budget` evaluations.

    The budget counts evaluated data points (one distance calculation each).
    Returns up to `want` ids, ascending by distance.
    """
    heap: list[tuple[float, int, int, int]] = []
    tick = 0
    for t in range(len(forest)):
        heapq.heappush(heap, (0.0, tick, t, 0))
        tick += 1
    seen: set[int] = set()
    found_ids: list[np.ndarray] = []
    found_dists: list[np.ndarray] = []
    remaining = budget
    while heap and remaining > 0:
        bound, _, t, node = heapq.heappop(heap)
        tree = forest[t]
        while tree.dims[node] >= 0:
            delta = q[tree.dims[node]] - tree.vals[node]
            if delta < 0:
                near, far = tree.left[node], tree.right[node]
            else:
                near, far = tree.right[node], tree.left[node]
            heapq.heappush(heap, (bound + delta * delta, tick, t, int(far)))
            tick += 1
            node = int(near)
        lo = int(tree.start[node])
        hi = lo + int(tree.count[node])
        fresh = [int(i) for i in tree.ids[lo:hi]
                 if i not in seen and (allowed is None or allowed[i])]
        fresh = fresh[:remaining]
        if not fresh:
            continue
        seen.update(fresh)
        arr = np.asarray(fresh, np.int64)
        found_ids.append(arr)
        found_dists.append(batch_euclidean(q, values[arr], counter))
        remaining -= arr.shape[0]
    if not found_ids:
        return np.empty(0, np.int64)
    all_ids = np.concatenate(found_ids)
    all_dists = np.concatenate(found_dists)
    order = np.lexsort((all_ids, all_dists))[:want]
    return all_ids[order]


# ---------------------------------------------------------------------------
# stacked sparse layers
# ---------------------------------------------------------------------------


class _Layer:
    """One sparse layer: a growable capped-degree graph over a node subset."""

    __slots__ = ("members", "g2l", "values", "adj", "lengths", "marks", "tag", "count")

    def __init__(self, degree: int, d: int, cap: int = 16):
        self.members = np.empty(cap, np.int64)
        self.g2l: dict[int, int] = {}
        self.values = np.empty((cap, d), np.float32)
        self.adj = np.full((cap, degree), -1, np.int32)
        self.lengths = np.zeros(cap, np.int32)
        self.marks = np.zeros(cap, np.int64)
        self.tag = 0
        self.count = 0

    def _grow(self) -> None:
        cap = self.members.shape[0] * 2
        for name in ("members", "values", "adj", "lengths"):
            old = getattr(self, name)
            shape = (cap,) + old.shape[1:]
            fresh = np.full(shape, -1, old.dtype) if name == "adj" else np.zeros(shape, old.dtype)
            fresh[: self.count] = old[: self.count]
            setattr(self, name, fresh)
        # fresh zeroed marks require restarting the visit tags, never copying them
        self.marks = np.zeros(cap, np.int64)
        self.tag = 0

    def add(self, gid: int, vec: np.ndarray) -> int:
        if self.count == self.members.shape[0]:
            self._grow()
        local = self.count
        self.members[local] = gid
        self.values[local] = vec
        self.g2l[gid] = local
        self.count += 1
        return local

    def beam(self, q: np.ndarray, start_local: int, width: int):
        self.tag += 1
        ids, dists, size, hops, evals, _ = _kernels.beam_search(
            self.adj, self.lengths, self.values,
            np.asarray([start_local], np.int64), q, width, self.marks, self.tag)
        return ids, dists, evals


class StackedLayers:
    """Nested hierarchical layers: layer L's members all appear in layer L-1.

    Insertions connect a node in every layer up to its sampled level using a
    beam search plus relative-neighborhood pruning within that layer; queries
    greedily descend from the fixed top entry to a base-layer seed.
    """

    def __init__(self, values: np.ndarray, degree: int, beam_width: int):
        self.values = values
        self.degree = degree
        self.beam_width = beam_width
        self.levels = np.zeros(values.shape[0], np.int32)
        self.layers: list[_Layer] = []
        self.entry = -1
        self.top = 0

    def _layer(self, level: int) -> _Layer:
        while len(self.layers) < level:
            self.layers.append(_Layer(self.degree, self.values.shape[1]))
        return self.layers[level - 1]

    def insert(self, v: int, level: int) -> tuple[int, int]:
        """Insert v at its level; returns (base-layer entry for v, evaluations)."""
        self.levels[v] = level
        vec = self.values[v].astype(np.float64)
        if self.entry < 0:
            for lvl in range(1, level + 1):
                self._layer(lvl).add(v, self.values[v])
            self.entry = v
            self.top = level
            return v, 0
        evals = 0
        cur = self.entry
        for lvl in range(self.top, level, -1):
            cur, ev = self._greedy(lvl, vec, cur)
            evals += ev
        for lvl in range(min(level, self.top), 0, -1):
            layer = self._layer(lvl)
            ids, dists, ev = layer.beam(vec, layer.g2l[cur], self.beam_width)
            evals += ev
            keep = np.empty(self.degree, np.int64)
            keep_dists = np.empty(self.degree, np.float64)
            nkept, p_evals, _ = _kernels._prune_rows(
                layer.values, ids, dists, self.degree, _RND_CODE, 1.0, _COS60,
                keep, keep_dists)
            evals += p_evals
            local = layer.add(v, self.values[v])
            layer.adj[local, :nkept] = keep[:nkept]
            layer.lengths[local] = nkept
            r_evals, _, _, _, _ = _kernels.connect_reverse(
                layer.adj, layer.lengths, layer.values, local, keep[:nkept],
                _RND_CODE, 1.0, _COS60)
            evals += r_evals
            cur = int(layer.members[ids[0]])
        if level > self.top:
            for lvl in range(self.top + 1, level + 1):
                self._layer(lvl).add(v, self.values[v])
            self.top = level
            self.entry = v
        elif level == self.top and v < self.entry:
            self.entry = v
        return cur, evals

    def _greedy(self, level: int, q: np.ndarray, cur: int) -> tuple[int, int]:
        layer = self._layer(level)
        ids, _, evals = layer.beam(q, layer.g2l[cur], 1)
        return int(layer.members[ids[0]]), evals

    def descend(self, q: np.ndarray) -> tuple[int, int]:
        """Greedy walk from the top entry down to a base-layer node id."""
        cur = self.entry
        evals = 0
        for lvl in range(self.top, 0, -1):
            cur, ev = self._greedy(lvl, q, cur)
            evals += ev
        return cur, evals


# ---------------------------------------------------------------------------
# the seed index
# ---------------------------------------------------------------------------


@dataclass
class SeedIndex:
    """Per-strategy state used to produce entry seeds for beam searches."""

    strategy: SeedStrategy
    values: np.ndarray = field(repr=False)
    graph: Graph = field(repr=False)
    entry_id: int = -1  # sf fixed node / md medoid / ks optional medoid
    rng_seed: int = 0
    rng: np.random.Generator | None = field(default=None, repr=False)
    forest: list[KDTree] | None = field(default=None, repr=False)
    layers: StackedLayers | None = field(default=None, repr=False)


def build_seed_index(ds: Dataset, g: Graph, strategy: SeedStrategy, seed: int = 0,
                     rng: np.random.Generator | None = None) -> SeedIndex:
    """Construct the auxiliary state a strategy needs on top of a built graph.

    `rng` overrides the level/tree randomness stream (mainly for tests).
    """
    if ds.n < 1:
        raise ParameterError("cannot build a seed index over an empty dataset")
    if g.n != ds.n:
        raise ParameterError(f"graph has {g.n} nodes but dataset has {ds.n} rows")
    index = SeedIndex(strategy=strategy, values=ds.values, graph=g, rng_seed=int(seed))
    if strategy.kind == "sf":
        index.entry_id = int(np.random.default_rng((seed, 1)).integers(ds.n))
    elif strategy.kind == "md":
        index.entry_id = compute_medoid(ds)
    elif strategy.kind == "ks":
        index.rng = np.random.default_rng((seed, 2))
        if strategy.ks_with_medoid:
            index.entry_id = compute_medoid(ds)
    elif strategy.kind == "kd":
        tree_rng = rng if rng is not None else np.random.default_rng((seed, 3))
        index.forest = [KDTree.build(ds.values, strategy.kd_leaf_size, tree_rng)
                        for _ in range(strategy.kd_trees)]
    else:  # sn
        level_rng = rng if rng is not None else np.random.default_rng((seed, 4))
        layers = StackedLayers(ds.values, strategy.sn_degree,
                               max(32, 2 * strategy.sn_degree))
        for v in range(ds.n):
            xi = 1.0 - float(level_rng.random())
            level = sample_level(xi, strategy.sn_degree)
            if v == 0 or level > 0:
                layers.insert(v, level)
            else:
                layers.levels[v] = 0
                if layers.top == 0 and v < layers.entry:
                    layers.entry = v
        index.layers = layers
    return index


def select_seeds(si: SeedIndex, q: np.ndarray, want: int,
                 counter: DistanceCounter | None = None,
                 rng: np.random.Generator | None = None,
                 allowed: np.ndarray | None = None) -> np.ndarray:
    """Entry seeds for one query, per the index's strategy.

    `want` bounds the sample size for ks and kd; fixed-entry strategies return
    their entry plus its out-neighbors regardless. `rng` rebinds the ks stream
    (deterministic per-query selection); `allowed` masks candidate ids (used
    while a graph is still being built).
    """
    if want < 1:
        raise ParameterError(f"want must be >= 1, got {want}")
    n = si.values.shape[0]
    want = min(want, n)
    q = np.asarray(q, np.float64).ravel()
    kind = si.strategy.kind
    if kind in ("sf", "md"):
        return _entry_with_neighbors(si.graph, si.entry_id)
    if kind == "ks":
        gen = rng if rng is not None else si.rng
        picks = gen.choice(n, size=want, replace=False).astype(np.int64)
        if si.strategy.ks_with_medoid:
            picks = np.concatenate(([si.entry_id], picks[picks != si.entry_id]))
        return picks
    if kind == "kd":
        found = _kd_candidates(si.forest, si.values, q, want,
                               si.strategy.kd_max_visits, counter, allowed)
        return found
    # sn
    base, evals = si.layers.descend(q)
    if counter is not None:
        counter.add(evals)
    return _entry_with_neighbors(si.graph, base)


def _entry_with_neighbors(g: Graph, entry: int) -> np.ndarray:
    return np.concatenate(([entry], g.neighbors(entry))).astype(np.int64)


def default_want(strategy: SeedStrategy, k: int) -> int:
    """The natural seed count for a query: the configured sample size for ks,
    otherwise bounded by the result size (fixed-entry kinds ignore it)."""
    return strategy.ks_count if strategy.kind == "ks" else max(k, 1)


# ---------------------------------------------------------------------------
# serialization (opaque blob inside the index file)
# ---------------------------------------------------------------------------

_DTYPES = {0: np.int32, 1: np.int64, 2: np.float32, 3: np.float64}
_DTYPE_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


def _w_arr(buf: io.BytesIO, arr: np.ndarray) -> None:
    code = _DTYPE_CODES[arr.dtype]
    buf.write(struct.pack("<BB", code, arr.ndim))
    for s in arr.shape:
        buf.write(struct.pack("<Q", s))
    buf.write(np.ascontiguousarray(arr).tobytes())


def _r_arr(buf: io.BytesIO) -> np.ndarray:
    code, ndim = struct.unpack("<BB", buf.read(2))
    shape = tuple(struct.unpack("<Q", buf.read(8))[0] for _ in range(ndim))
    dtype = np.dtype(_DTYPES[code])
    total = int(np.prod(shape)) if shape else 1
    return np.frombuffer(buf.read(dtype.itemsize * total), dtype).reshape(shape).copy()


def seed_index_to_blob(si: SeedIndex) -> bytes:
    buf = io.BytesIO()
    spec = si.strategy.spec().encode()
    buf.write(struct.pack("<H", len(spec)))
    buf.write(spec)
    kind = si.strategy.kind
    if kind in ("sf", "md", "ks"):
        buf.write(struct.pack("<qq", si.entry_id, si.rng_seed))
    elif kind == "kd":
        buf.write(struct.pack("<I", len(si.forest)))
        for tree in si.forest:
            for arr in (tree.dims, tree.vals, tree.left, tree.right,
                        tree.start, tree.count, tree.ids):
                _w_arr(buf, arr)
    else:  # sn
        layers = si.layers
        buf.write(struct.pack("<iqI", layers.top, layers.entry, len(layers.layers)))
        _w_arr(buf, layers.levels)
        for layer in layers.layers:
            c = layer.count
            _w_arr(buf, layer.members[:c])
            _w_arr(buf, layer.lengths[:c])
            _w_arr(buf, layer.adj[:c])
    return buf.getvalue()


def seed_index_from_blob(blob: bytes, ds: Dataset, g: Graph) -> SeedIndex:
    buf = io.BytesIO(blob)
    (spec_len,) = struct.unpack("<H", buf.read(2))
    strategy = SeedStrategy.parse(buf.read(spec_len).decode())
    si = SeedIndex(strategy=strategy, values=ds.values, graph=g)
    kind = strategy.kind
    if kind in ("sf", "md", "ks"):
        si.entry_id, si.rng_seed = struct.unpack("<qq", buf.read(16))
        if kind == "ks":
            si.rng = np.random.default_rng((si.rng_seed, 2))
    elif kind == "kd":
        (n_trees,) = struct.unpack("<I", buf.read(4))
        si.forest = []
        for _ in range(n_trees):
            parts = [_r_arr(buf) for _ in range(7)]
            si.forest.append(KDTree(*parts))
    else:
        top, entry, n_layers = struct.unpack("<iqI", buf.read(16))
        layers = StackedLayers(ds.values, strategy.sn_degree,
                               max(32, 2 * strategy.sn_degree))
        layers.top = top
        layers.entry = entry
        layers.levels = _r_arr(buf)
        for _ in range(n_layers):
            members = _r_arr(buf)
            lengths = _r_arr(buf)
            adj = _r_arr(buf)
            layer = _Layer(strategy.sn_degree, ds.d, cap=max(16, members.shape[0]))
            for local, gid in enumerate(members):
                layer.members[local] = gid
                layer.values[local] = ds.values[gid]
                layer.g2l[int(gid)] = local
            layer.count = members.shape[0]
            layer.adj[: layer.count] = adj
            layer.lengths[: layer.count] = lengths
            layers.layers.append(layer)
        si.layers = layers
    if kind in ("sf", "md") and not 0 <= si.entry_id < ds.n:
        raise FormatError("seed blob entry id outside the dataset")
    return si
