import numpy as np
import pytest

from proxgraph.data import SyntheticSpec, gen_powerlaw
from proxgraph.errors import DataError, ParameterError
from proxgraph.graph import (Graph, degree_stats, graph_bytes, reachable_fraction,
                             read_index, write_index)


def _complete_digraph(n):
    g = Graph.empty(n, n - 1)
    for u in range(n):
        g.set_neighbors(u, [v for v in range(n) if v != u])
    return g


def test_reachable_complete():
    assert reachable_fraction(_complete_digraph(6), 0) == 1.0


def test_reachable_two_cliques():
    g = Graph.empty(10, 4)
    for base in (0, 5):
        for u in range(base, base + 5):
            g.set_neighbors(u, [v for v in range(base, base + 5) if v != u])
    assert reachable_fraction(g, 0) == 0.5
    assert reachable_fraction(g, 7) == 0.5


def test_reachable_entry_validated():
    with pytest.raises(ParameterError):
        reachable_fraction(_complete_digraph(3), 3)


def test_degree_stats_empty_adjacency():
    g = Graph.empty(4, 3)
    assert degree_stats(g) == (0, 0.0, 0)


def test_degree_stats_star():
    g = Graph.empty(5, 4)
    g.set_neighbors(0, [1, 2, 3, 4])
    assert degree_stats(g) == (0, 0.8, 4)


def test_invariants_catch_violations():
    g = Graph.empty(3, 2)
    g.set_neighbors(0, [1, 2])
    g.check_invariants()
    g.adjacency[0, 0] = 0  # self loop
    with pytest.raises(DataError):
        g.check_invariants()
    g.adjacency[0, 0] = 2  # duplicate
    with pytest.raises(DataError):
        g.check_invariants()


def test_index_roundtrip_preserves_order(tmp_path):
    g = Graph.empty(4, 3)
    g.set_neighbors(0, [2, 1])  # order matters and must survive
    g.set_neighbors(1, [3])
    g.set_neighbors(3, [0, 1, 2])
    meta = {"builder": "ii", "nd": "rnd", "ss": "ks:k=4", "params": {"R": 3}}
    path = str(tmp_path / "g.idx")
    write_index(path, g, 8, meta, seed_blob=b"opaque")
    back, d, got_meta, blob = read_index(path)
    assert d == 8 and got_meta == meta and blob == b"opaque"
    assert np.array_equal(back.lengths, g.lengths)
    for u in range(4):
        assert np.array_equal(back.neighbors(u), g.neighbors(u))
    assert graph_bytes(back) == graph_bytes(g)


def test_index_without_blob(tmp_path):
    g = Graph.empty(2, 1)
    g.set_neighbors(0, [1])
    path = str(tmp_path / "g.idx")
    write_index(path, g, 4, {}, None)
    _, _, _, blob = read_index(path)
    assert blob is None


def test_graph_bytes_distinguish_order():
    a = Graph.empty(3, 2)
    a.set_neighbors(0, [1, 2])
    b = Graph.empty(3, 2)
    b.set_neighbors(0, [2, 1])
    assert graph_bytes(a) != graph_bytes(b)


def test_built_graph_respects_cap():
    from proxgraph.build import BuildParams, build_ii

    ds = gen_powerlaw(SyntheticSpec(400, 8, 0.0, seed=1))
    g, _, _ = build_ii(ds, BuildParams(max_degree=10, beam_width=40, seed=2))
    g.check_invariants()
    assert degree_stats(g)[2] <= 10
