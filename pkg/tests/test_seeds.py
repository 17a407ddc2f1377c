import math

import numpy as np
import pytest

from proxgraph.build import BuildParams, build_ii
from proxgraph.data import Dataset, SyntheticSpec, gen_powerlaw
from proxgraph.errors import ParameterError
from proxgraph.graph import Graph
from proxgraph.metrics import DistanceCounter, euclidean
from proxgraph.seeds import (SeedStrategy, build_seed_index, compute_medoid,
                             sample_level, seed_index_from_blob,
                             seed_index_to_blob, select_seeds)


class TestSampleLevel:
    def test_xi_one_is_level_zero(self):
        for degree in (4, 16, 32, 64):
            assert sample_level(1.0, degree) == 0

    def test_known_values(self):
        assert sample_level(0.25, 4) == 2  # ln 4 / ln 2
        assert sample_level(1.0 / 16.0, 32) == 1  # ln 16 / ln 16

    def test_rejects_bad_input(self):
        with pytest.raises(ParameterError):
            sample_level(0.0, 8)
        with pytest.raises(ParameterError):
            sample_level(0.5, 3)


class TestComputeMedoid:
    def test_collinear(self):
        ds = Dataset(np.array([[0.0], [1.0], [3.0]], np.float32))
        assert compute_medoid(ds) == 1  # centroid 4/3 is nearest to the middle point

    def test_singleton(self):
        assert compute_medoid(Dataset(np.array([[2.0, 2.0]], np.float32))) == 0

    def test_square_tie_breaks_to_smallest_id(self):
        square = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], np.float32)
        assert compute_medoid(Dataset(square)) == 0

    def test_matches_exact_medoid_on_unimodal_data(self):
        rng = np.random.default_rng(31)
        values = (rng.standard_normal((200, 8)) * 0.3 + 1.0).astype(np.float32)
        ds = Dataset(values)
        sums = np.array([
            sum(euclidean(values[i], values[j]) for j in range(200))
            for i in range(200)
        ])
        assert compute_medoid(ds) == int(np.argmin(sums))


def _small_index(kind, n=300, seed=1, **kwargs):
    ds = gen_powerlaw(SyntheticSpec(n, 8, 0.0, seed=7))
    g, _, _ = build_ii(ds, BuildParams(max_degree=8, beam_width=32, seed=3))
    return ds, g, build_seed_index(ds, g, SeedStrategy(kind, **kwargs), seed=seed)


def test_sf_is_query_independent():
    ds, g, si = _small_index("sf")
    a = select_seeds(si, ds.values[0], want=5)
    b = select_seeds(si, ds.values[99], want=5)
    assert np.array_equal(a, b)
    assert a[0] == si.entry_id
    assert set(a[1:]) == set(int(v) for v in g.neighbors(si.entry_id))


def test_md_entry_is_medoid():
    ds, g, si = _small_index("md")
    assert si.entry_id == compute_medoid(ds)
    seeds = select_seeds(si, ds.values[5], want=3)
    assert seeds[0] == si.entry_id


class TestKS:
    def test_distinct_and_deterministic(self):
        ds, g, si = _small_index("ks", ks_count=10)
        a = select_seeds(si, ds.values[0], want=10)
        assert np.unique(a).size == 10
        _, _, si2 = _small_index("ks", ks_count=10)
        b = select_seeds(si2, ds.values[0], want=10)
        assert np.array_equal(a, b)  # fresh index, same seed, same stream

    def test_explicit_rng_rebinds_stream(self):
        ds, g, si = _small_index("ks")
        a = select_seeds(si, ds.values[0], want=8, rng=np.random.default_rng(5))
        b = select_seeds(si, ds.values[1], want=8, rng=np.random.default_rng(5))
        assert np.array_equal(a, b)

    def test_marginal_distribution_close_to_uniform(self):
        # 1e5 drawn ids over n=100: every id within 3 sigma of the binomial
        # mean. The stream is frozen: a biased sampler fails for every seed,
        # while an unbiased one sits inside the bound for this one.
        ds = gen_powerlaw(SyntheticSpec(100, 4, 0.0, seed=11))
        g, _, _ = build_ii(ds, BuildParams(max_degree=4, beam_width=8, seed=3))
        si = build_seed_index(ds, g, SeedStrategy("ks", ks_count=5), seed=0)
        draws = 20000
        counts = np.zeros(100, np.int64)
        for _ in range(draws):
            counts[select_seeds(si, ds.values[0], want=5)] += 1
        p = 5 / 100
        mean = draws * p
        sigma = math.sqrt(draws * p * (1 - p))
        assert np.abs(counts - mean).max() <= 3 * sigma

    def test_medoid_flag_prepends_entry(self):
        ds, g, si = _small_index("ks", ks_count=6, ks_with_medoid=True)
        seeds = select_seeds(si, ds.values[0], want=6)
        assert seeds[0] == compute_medoid(ds)


class TestKD:
    def test_first_leaf_on_a_line(self):
        # 1-d points 0..7, leaf size 1: the descent for query 3.4 must reach
        # the leaf holding 3 before any other evaluation
        ds = Dataset(np.arange(8, dtype=np.float32).reshape(-1, 1))
        g = Graph.empty(8, 2)
        si = build_seed_index(ds, g, SeedStrategy("kd", kd_leaf_size=1,
                                                  kd_max_visits=1), seed=0)
        seeds = select_seeds(si, np.array([3.4]), want=4)
        assert seeds.tolist() == [3]

    def test_full_budget_finds_true_neighbors(self):
        ds, g, si = _small_index("kd", kd_max_visits=300, kd_leaf_size=16)
        q = np.random.default_rng(2).random(8)
        seeds = select_seeds(si, q, want=5)
        from proxgraph.oracle import exact_knn
        want = [i for i, _ in exact_knn(ds, q, 5)]
        assert seeds.tolist() == want

    def test_budget_counts_evaluations(self):
        ds, g, si = _small_index("kd", kd_max_visits=40)
        counter = DistanceCounter()
        select_seeds(si, np.random.default_rng(3).random(8), want=10, counter=counter)
        assert 0 < counter.calls <= 40

    def test_every_tree_covers_all_ids(self):
        ds, g, si = _small_index("kd", kd_trees=3)
        for tree in si.forest:
            assert np.array_equal(np.sort(tree.ids), np.arange(ds.n))


class _ScriptedRng:
    """Stand-in generator yielding a fixed .random() script (cycled)."""

    def __init__(self, script):
        self.script = list(script)
        self.at = 0

    def random(self):
        value = self.script[self.at % len(self.script)]
        self.at += 1
        return value


class TestSN:
    def test_all_level_zero_degenerates_to_fixed_entry(self):
        ds, g, _ = _small_index("sf")
        si = build_seed_index(ds, g, SeedStrategy("sn", sn_degree=4), seed=0,
                              rng=_ScriptedRng([0.0]))  # xi = 1 always
        assert si.layers.top == 0
        assert len(si.layers.layers) == 0
        seeds = select_seeds(si, ds.values[3], want=4)
        assert seeds[0] == si.layers.entry
        assert set(seeds[1:]) == set(int(v) for v in g.neighbors(si.layers.entry))

    def test_two_layer_hand_trace(self):
        # 1-d chain over points 0..7; nodes 2 and 5 get level 1 (xi = 0.4 with
        # degree 4 gives level 1); the upper layer connects 2 <-> 5
        ds = Dataset(np.arange(8, dtype=np.float32).reshape(-1, 1))
        g = Graph.empty(8, 2)
        for u in range(8):
            nbrs = [v for v in (u - 1, u + 1) if 0 <= v < 8]
            g.set_neighbors(u, nbrs)
        script = [0.0, 0.0, 0.6, 0.0, 0.0, 0.6, 0.0, 0.0]
        si = build_seed_index(ds, g, SeedStrategy("sn", sn_degree=4), seed=0,
                              rng=_ScriptedRng(script))
        layers = si.layers
        assert layers.top == 1
        assert layers.entry == 2  # smallest id at the top level
        top_members = set(layers.layers[0].members[: layers.layers[0].count].tolist())
        assert top_members == {2, 5}
        # greedy at layer 1 from entry 2 moves to 5 for a query near 5
        seeds = select_seeds(si, np.array([5.2]), want=4)
        assert seeds[0] == 5
        assert set(seeds[1:]) == {4, 6}
        # and stays at 2 for a query near the entry itself
        seeds = select_seeds(si, np.array([1.9]), want=4)
        assert seeds[0] == 2
        assert set(seeds[1:]) == {1, 3}

    def test_layer_membership_is_nested(self):
        ds = gen_powerlaw(SyntheticSpec(2000, 8, 0.0, seed=13))
        g, _, _ = build_ii(ds, BuildParams(max_degree=8, beam_width=32, seed=3))
        si = build_seed_index(ds, g, SeedStrategy("sn", sn_degree=8), seed=5)
        layers = si.layers
        assert layers.top >= 1  # 2000 nodes at degree 8 make upper layers overwhelmingly likely
        previous = set(range(ds.n))
        for layer in layers.layers:
            members = set(layer.members[: layer.count].tolist())
            assert members <= previous
            previous = members
        # levels array agrees with membership
        for lvl, layer in enumerate(layers.layers, start=1):
            members = layer.members[: layer.count]
            assert (layers.levels[members] >= lvl).all()

    def test_descent_counts_evaluations(self):
        ds, g, _ = _small_index("sf", n=500)
        si = build_seed_index(ds, g, SeedStrategy("sn", sn_degree=8), seed=5)
        counter = DistanceCounter()
        select_seeds(si, np.random.default_rng(4).random(8), want=4, counter=counter)
        if si.layers.top >= 1:
            assert counter.calls > 0


def test_seed_ids_valid_and_unique_across_strategies():
    rng = np.random.default_rng(41)
    for kind, kwargs in (("sf", {}), ("md", {}), ("ks", {"ks_count": 12}),
                         ("kd", {}), ("sn", {"sn_degree": 8})):
        ds, g, si = _small_index(kind, **kwargs)
        for _ in range(5):
            seeds = select_seeds(si, rng.random(8), want=12)
            assert np.unique(seeds).size == seeds.size
            assert (seeds >= 0).all() and (seeds < ds.n).all()


def test_want_clamps_to_population():
    ds, g, si = _small_index("ks", n=300)
    seeds = select_seeds(si, ds.values[0], want=10000)
    assert seeds.size == 300
    with pytest.raises(ParameterError):
        select_seeds(si, ds.values[0], want=0)


def test_blob_roundtrip_every_kind():
    rng = np.random.default_rng(51)
    for kind, kwargs in (("sf", {}), ("md", {}), ("ks", {"ks_count": 9}),
                         ("kd", {"kd_trees": 2}), ("sn", {"sn_degree": 8})):
        ds, g, si = _small_index(kind, **kwargs)
        restored = seed_index_from_blob(seed_index_to_blob(si), ds, g)
        assert restored.strategy == si.strategy
        q = rng.random(8)
        a = select_seeds(si, q, want=7, rng=np.random.default_rng(1))
        b = select_seeds(restored, q, want=7, rng=np.random.default_rng(1))
        assert np.array_equal(a, b)


def test_strategy_parsing_roundtrip():
    for text in ("sf", "md", "ks:k=16", "ks:k=16,medoid=1",
                 "kd:trees=2,leaf=16,visits=256", "sn:M=16"):
        s = SeedStrategy.parse(text)
        assert SeedStrategy.parse(s.spec()) == s
    with pytest.raises(ParameterError):
        SeedStrategy.parse("sn:M=2")
    with pytest.raises(ParameterError):
        SeedStrategy.parse("xx")
