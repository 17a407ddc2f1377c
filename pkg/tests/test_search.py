import numpy as np
import pytest
from shadow_beam import replica_beam

from proxgraph.build import BuildParams, build_dc, build_ii
from proxgraph.data import Dataset, SyntheticSpec, gen_powerlaw
from proxgraph.errors import ParameterError
from proxgraph.graph import Graph
from proxgraph.oracle import exact_knn
from proxgraph.search import beam_search, search_partitioned


def _complete_graph_over(values):
    n = values.shape[0]
    g = Graph.empty(n, n - 1)
    for u in range(n):
        g.set_neighbors(u, [v for v in range(n) if v != u])
    return g


def test_complete_graph_equals_oracle():
    ds = gen_powerlaw(SyntheticSpec(60, 6, 0.0, seed=3))
    g = _complete_graph_over(ds.values)
    q = np.random.default_rng(1).random(6)
    result, stats = beam_search(g, ds, [5], q, 10, 60)
    want = exact_knn(ds, q, 10)
    assert result.ids.tolist() == [i for i, _ in want]
    assert stats.dist_calcs == 60


def test_path_graph_hand_trace():
    # chain 0-1-2-3-4 over 1-d points {0..4}; q=4.2, k=1, L=2, seed 0
    ds = Dataset(np.arange(5, dtype=np.float32).reshape(-1, 1))
    g = Graph.empty(5, 2)
    g.set_neighbors(0, [1])
    g.set_neighbors(1, [0, 2])
    g.set_neighbors(2, [1, 3])
    g.set_neighbors(3, [2, 4])
    g.set_neighbors(4, [3])
    result, stats = beam_search(g, ds, [0], np.array([4.2]), 1, 2)
    assert result.ids.tolist() == [4]
    assert stats.hops == 5
    assert stats.dist_calcs == 5


def test_exhaustive_beam_reaches_recall_one():
    ds = gen_powerlaw(SyntheticSpec(300, 8, 0.0, seed=4))
    g, _, _ = build_ii(ds, BuildParams(max_degree=8, beam_width=32, seed=5))
    rng = np.random.default_rng(6)
    for _ in range(10):
        q = rng.random(8)
        result, _ = beam_search(g, ds, [0], q, 10, 300)
        want = [i for i, _ in exact_knn(ds, q, 10)]
        assert result.ids.tolist() == want


def test_matches_replica_and_counts_unique_evaluations():
    ds = gen_powerlaw(SyntheticSpec(400, 8, 0.0, seed=7))
    g, _, _ = build_ii(ds, BuildParams(max_degree=8, beam_width=32, seed=8))
    rng = np.random.default_rng(9)
    for _ in range(25):
        q = rng.random(8)
        seeds = rng.choice(400, 3, replace=False)
        result, stats = beam_search(g, ds, seeds, q, 5, 20)
        want, evaluated = replica_beam(g, ds.values, seeds, q, 5, 20)
        assert result.ids.tolist() == want
        assert stats.dist_calcs == len(evaluated)
        assert stats.hops <= stats.dist_calcs
        assert stats.seeds_used == 3


def test_best_so_far_never_worsens():
    ds = gen_powerlaw(SyntheticSpec(200, 4, 0.0, seed=10))
    g, _, _ = build_ii(ds, BuildParams(max_degree=6, beam_width=24, seed=11))
    trace = []
    replica_beam(g, ds.values, [0], np.random.default_rng(12).random(4), 3, 12,
                 best_trace=trace)
    assert all(b <= a + 1e-15 for a, b in zip(trace, trace[1:]))


def test_result_set_sorted_unique():
    ds = gen_powerlaw(SyntheticSpec(150, 4, 0.0, seed=13))
    g, _, _ = build_ii(ds, BuildParams(max_degree=6, beam_width=24, seed=14))
    result, _ = beam_search(g, ds, [3, 14, 15], np.random.default_rng(15).random(4), 10, 40)
    assert (np.diff(result.dists) >= 0).all()
    assert np.unique(result.ids).size == result.ids.size


def test_parameter_validation():
    ds = Dataset(np.zeros((3, 2), np.float32) + np.arange(3).reshape(-1, 1).astype(np.float32))
    g = _complete_graph_over(ds.values)
    with pytest.raises(ParameterError):
        beam_search(g, ds, [0], np.zeros(2), 3, 2)  # L < k
    with pytest.raises(ParameterError):
        beam_search(g, ds, [], np.zeros(2), 1, 2)  # no seeds
    with pytest.raises(ParameterError):
        beam_search(g, ds, [7], np.zeros(2), 1, 2)  # seed out of range
    with pytest.raises(ParameterError):
        beam_search(g, ds, [0], np.zeros(3), 1, 2)  # dimension mismatch


def _two_blob_dataset(n=400, d=8, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n // 2, d)) * 0.05
    b = rng.standard_normal((n // 2, d)) * 0.05 + 5.0
    return Dataset(np.vstack([a, b]).astype(np.float32))


class TestPartitioned:
    def test_single_partition_matches_plain_beam(self):
        ds = gen_powerlaw(SyntheticSpec(200, 6, 0.0, seed=16))
        params = BuildParams(max_degree=8, beam_width=32, seed=17)
        pi = build_dc(ds, 1, params)
        q = np.random.default_rng(18).random(6)
        got, _ = search_partitioned(pi, ds, q, 5, 40, 1, pi.seed_indexes,
                                    seed_rng=np.random.default_rng(0))
        from proxgraph.seeds import select_seeds
        seeds = select_seeds(pi.seed_indexes[0], q, want=32,
                             rng=np.random.default_rng(0))
        want, _ = beam_search(pi.graphs[0], ds, seeds, q, 5, 40)
        assert got.ids.tolist() == want.ids.tolist()

    def test_probing_everything_is_exhaustive(self):
        ds = _two_blob_dataset(seed=19)
        params = BuildParams(max_degree=8, beam_width=32, seed=20)
        pi = build_dc(ds, 2, params)
        q = np.random.default_rng(21).random(8) * 5
        result, _ = search_partitioned(pi, ds, q, 10, 200, 2, pi.seed_indexes)
        want = [i for i, _ in exact_knn(ds, q, 10)]
        assert result.ids.tolist() == want

    def test_more_probes_never_hurt(self):
        from proxgraph.bench import recall
        from proxgraph.oracle import ground_truth
        from proxgraph.data import QuerySet

        ds = _two_blob_dataset(seed=22)
        params = BuildParams(max_degree=8, beam_width=32, seed=23)
        pi = build_dc(ds, 2, params)
        qs = QuerySet(ds.values[np.random.default_rng(24).choice(400, 20, replace=False)])
        gt = ground_truth(ds, qs, 5)
        for qi in range(qs.m):
            r1, _ = search_partitioned(pi, ds, qs.values[qi], 5, 50, 1, pi.seed_indexes)
            r2, _ = search_partitioned(pi, ds, qs.values[qi], 5, 50, 2, pi.seed_indexes)
            assert (recall(r2, gt.ids[qi], k=5)
                    >= recall(r1, gt.ids[qi], k=5))

    def test_nprobe_validation(self):
        ds = _two_blob_dataset(seed=25)
        pi = build_dc(ds, 2, BuildParams(max_degree=8, beam_width=32, seed=26))
        with pytest.raises(ParameterError):
            search_partitioned(pi, ds, np.zeros(8), 1, 4, 3, pi.seed_indexes)
        with pytest.raises(ParameterError):
            search_partitioned(pi, ds, np.zeros(8), 1, 4, 0, pi.seed_indexes)