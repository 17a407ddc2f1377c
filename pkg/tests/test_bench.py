import io

import numpy as np
import pytest

from proxgraph.bench import (RUN_CSV_FIELDS, recall, run_workload, trimmed_mean,
                             write_records)
from proxgraph.build import BuildParams, GraphIndex, build_ii, build_meta
from proxgraph.data import Dataset, QuerySet, SyntheticSpec, gen_powerlaw
from proxgraph.errors import ParameterError
from proxgraph.metrics import DistanceCounter
from proxgraph.oracle import exact_knn, ground_truth
from proxgraph.search import ResultSet, beam_search
from proxgraph.seeds import select_seeds


class TestRecall:
    def test_identical_sets(self):
        r = ResultSet(np.arange(10), np.linspace(0, 1, 10))
        assert recall(r, np.arange(10)) == 1.0

    def test_partial_overlap(self):
        r = ResultSet(np.array([0, 1, 2, 3, 4, 5, 6, 7, 20, 21]),
                      np.linspace(0, 1, 10))
        assert recall(r, np.arange(10)) == pytest.approx(0.8)

    def test_duplicate_distance_tolerance_mode(self):
        # 20 points: four unique near neighbors, then two coincident points at
        # the k-th radius; the id-based score penalizes returning the twin,
        # the distance-tolerance score does not
        rng = np.random.default_rng(1)
        near = rng.standard_normal((4, 2)) * 0.1
        twin = np.array([[2.0, 0.0], [2.0, 0.0]])
        far = rng.standard_normal((14, 2)) * 0.1 + 40.0
        ds = Dataset(np.vstack([near, twin, far]).astype(np.float32))
        query = np.zeros(2)
        truth = exact_knn(ds, query, 5)
        true_ids = np.array([i for i, _ in truth])
        true_dists = np.array([d for _, d in truth])
        assert true_ids[-1] == 4  # tie broken toward the smaller twin
        swapped = ResultSet(np.array([0, 1, 2, 3, 5]), true_dists.copy())
        assert recall(swapped, true_ids, true_dists, 5) == pytest.approx(0.8)
        assert recall(swapped, true_ids, true_dists, 5,
                      distance_tolerance=True) == 1.0

    def test_needs_enough_entries(self):
        r = ResultSet(np.arange(3), np.linspace(0, 1, 3))
        with pytest.raises(ParameterError):
            recall(r, np.arange(10), k=5)


def test_trimmed_mean_drops_extremes():
    times = [5.0, 1.0, 2.0, 100.0, 3.0, 0.5]
    assert trimmed_mean(times, 2) == pytest.approx((2.0 + 3.0) / 2)
    assert trimmed_mean([4.0, 6.0], 0) == 5.0
    with pytest.raises(ParameterError):
        trimmed_mean([1.0, 2.0], 1)


def _small_workbench(n=800, m=20, k=10, seed=0):
    ds = gen_powerlaw(SyntheticSpec(n, 8, 0.0, seed=seed))
    params = BuildParams(max_degree=8, beam_width=32, seed=seed + 1)
    g, si, _ = build_ii(ds, params)
    index = GraphIndex(g, si, build_meta("ii", params, ds.n, ds.d))
    qs = QuerySet(gen_powerlaw(SyntheticSpec(m, 8, 0.0, seed=seed + 2)).values)
    gt = ground_truth(ds, qs, k)
    return ds, index, qs, gt


class TestRunWorkload:
    def test_matches_single_search_calls(self):
        ds, index, qs, gt = _small_workbench()
        records = run_workload(index, ds, qs, gt, 10, [10], repeats=1, trim=0,
                               base_seed=7)
        per_query = []
        for qi in range(qs.m):
            counter = DistanceCounter()
            seeds = select_seeds(index.seed_index, qs.values[qi], want=32,
                                 counter=counter, rng=np.random.default_rng((7, qi)))
            result, stats = beam_search(index.graph, ds, seeds, qs.values[qi], 10, 10)
            per_query.append(recall(result, gt.ids[qi], k=10))
        assert records[0].recall == pytest.approx(np.mean(per_query))

    def test_rerun_is_identical(self):
        ds, index, qs, gt = _small_workbench(seed=3)
        a = run_workload(index, ds, qs, gt, 10, [16, 32], repeats=1, trim=0, base_seed=5)
        b = run_workload(index, ds, qs, gt, 10, [16, 32], repeats=1, trim=0, base_seed=5)
        for ra, rb in zip(a, b):
            assert ra.recall == rb.recall
            assert ra.dist_calcs == rb.dist_calcs

    def test_recall_grows_with_beam_width_to_one(self):
        ds, index, qs, gt = _small_workbench(seed=4)
        grid = [10, 20, 40, 80, 160, 320, ds.n]
        records = run_workload(index, ds, qs, gt, 10, grid, repeats=1, trim=0)
        recalls = [r.recall for r in records]
        for prev, cur in zip(recalls, recalls[1:]):
            assert cur >= prev - 0.01  # plateau noise allowed in id-tie mode
        assert recalls[-1] == 1.0

    def test_repetitions_consistent_and_timed(self):
        ds, index, qs, gt = _small_workbench(seed=6, m=5)
        records = run_workload(index, ds, qs, gt, 10, [20], repeats=6, trim=2)
        rec = records[0]
        assert rec.wall_ms_total > 0
        assert rec.qps == pytest.approx(qs.m / (rec.wall_ms_total / 1e3), rel=1e-9)

    def test_grid_validation(self):
        ds, index, qs, gt = _small_workbench(seed=8, m=5)
        with pytest.raises(ParameterError):
            run_workload(index, ds, qs, gt, 10, [], repeats=1, trim=0)
        with pytest.raises(ParameterError):
            run_workload(index, ds, qs, gt, 10, [5], repeats=1, trim=0)  # L < k
        with pytest.raises(ParameterError):
            run_workload(index, ds, qs, gt, 10, [20], repeats=2, trim=1)
        with pytest.raises(ParameterError):
            run_workload(index, ds, qs, gt, 10, [20], nprobe_grid=[1], repeats=1, trim=0)


def test_csv_schema():
    ds, index, qs, gt = _small_workbench(seed=9, m=5)
    records = run_workload(index, ds, qs, gt, 10, [15], repeats=1, trim=0,
                           dataset_tag="unit")
    out = io.StringIO()
    write_records(records, out)
    lines = out.getvalue().strip().split("\n")
    assert lines[0] == ",".join(RUN_CSV_FIELDS)
    assert lines[0] == "dataset,n,d,builder,nd,ss,R,L_build,k,L,nprobe,recall," \
                       "dist_calcs,hops,qps,wall_ms_total,seed"
    row = lines[1].split(",")
    assert len(row) == len(RUN_CSV_FIELDS)
    assert row[0] == "unit"
    assert row[3] == "ii"
