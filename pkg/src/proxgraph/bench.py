"""Experiment driver: run query workloads over built indexes and emit CSV.

Queries run sequentially (never batched); each grid point is repeated several
times for timing, the fastest and slowest repetitions are dropped, and the
mean of the remainder is reported. Recall and distance calculations must be
identical across repetitions, which is asserted, so only wall time varies.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .build import GraphIndex
from .data import Dataset, QuerySet
from .errors import ParameterError
from .graph import PartitionedIndex
from .metrics import DistanceCounter
from .oracle import GroundTruth
from .search import ResultSet, beam_search, search_partitioned
from .seeds import default_want, select_seeds

RUN_CSV_FIELDS = ("dataset", "n", "d", "builder", "nd", "ss", "R", "L_build", "k",
                  "L", "nprobe", "recall", "dist_calcs", "hops", "qps",
                  "wall_ms_total", "seed")


@dataclass(frozen=True)
class RunRecord:
    """One benchmark grid point; mirrors the CSV schema exactly."""

    dataset: str
    n: int
    d: int
    builder: str
    nd: str
    ss: str
    max_degree: int
    build_beam_width: int
    k: int
    beam_width: int
    nprobe: int
    recall: float
    dist_calcs: float
    hops: float
    qps: float
    wall_ms_total: float
    seed: int

    def row(self) -> list[str]:
        return [self.dataset, str(self.n), str(self.d), self.builder, self.nd,
                self.ss, str(self.max_degree), str(self.build_beam_width),
                str(self.k), str(self.beam_width), str(self.nprobe),
                repr(self.recall), repr(self.dist_calcs), repr(self.hops),
                f"{self.qps:.3f}", f"{self.wall_ms_total:.3f}", str(self.seed)]


def write_records(records, out) -> None:
    """CSV with a header row; `out` is any writable text stream."""
    out.write(",".join(RUN_CSV_FIELDS) + "\n")
    for rec in records:
        out.write(",".join(rec.row()) + "\n")


def trimmed_mean(times, trim: int) -> float:
    """Mean after dropping the `trim` smallest and `trim` largest values."""
    ordered = sorted(times)
    if trim < 0 or len(ordered) <= 2 * trim:
        raise ParameterError(f"cannot trim {trim} from both ends of {len(ordered)} runs")
    kept = ordered[trim:len(ordered) - trim] if trim else ordered
    return float(np.mean(kept))


def gnuplot_script(csv_path: str) -> str:
    """A ready-to-run gnuplot script plotting the efficiency/accuracy tradeoff."""
    recall_col = RUN_CSV_FIELDS.index("recall") + 1
    dc_col = RUN_CSV_FIELDS.index("dist_calcs") + 1
    return (
        "set datafile separator ','\n"
        "set xlabel 'recall'\n"
        "set ylabel 'mean distance calculations'\n"
        "set logscale y\n"
        "set key left top\n"
        f"plot '{csv_path}' every ::1 using {recall_col}:{dc_col} "
        "with linespoints title 'beam-width sweep'\n"
    )


def recall(returned: ResultSet, true_ids, true_dists=None, k: int | None = None,
           distance_tolerance: bool = False) -> float:
    """Fraction of the true k nearest neighbors present in the result.

    In distance-tolerance mode a returned id also counts when its distance is
    within the truth's k-th distance times (1 + 1e-6), which forgives id
    mismatches among duplicated points at the boundary.
    """
    true_ids = np.asarray(true_ids)
    if k is None:
        k = true_ids.shape[0]
    if len(returned) < k or true_ids.shape[0] < k:
        raise ParameterError(f"need at least k={k} entries on both sides, got "
                             f"{len(returned)} returned and {true_ids.shape[0]} true")
    if distance_tolerance:
        if true_dists is None:
            raise ParameterError("distance tolerance mode needs the true distances")
        threshold = float(true_dists[k - 1]) * (1.0 + 1e-6)
        hits = int((returned.dists[:k] <= threshold).sum())
    else:
        hits = int(np.isin(returned.ids[:k], true_ids[:k]).sum())
    return hits / k


def _query_pass(index, ds: Dataset, qs: QuerySet, gt: GroundTruth, k: int, L: int,
                nprobe: int, base_seed: int, distance_tolerance: bool):
    """One sequential sweep over the workload; returns per-query aggregates."""
    recalls = np.empty(qs.m)
    dist_calcs = np.empty(qs.m, np.int64)
    hops = np.empty(qs.m, np.int64)
    started = time.perf_counter()
    for qi in range(qs.m):
        q = qs.values[qi]
        rng = np.random.default_rng((base_seed, qi))
        if isinstance(index, GraphIndex):
            counter = DistanceCounter()
            seeds = select_seeds(index.seed_index, q,
                                 want=default_want(index.seed_index.strategy, k),
                                 counter=counter, rng=rng)
            result, stats = beam_search(index.graph, ds, seeds, q, k, L)
            stats.dist_calcs += counter.calls
        else:
            result, stats = search_partitioned(index, ds, q, k, L, nprobe,
                                               index.seed_indexes, seed_rng=rng)
        recalls[qi] = recall(result, gt.ids[qi], gt.dists[qi], k,
                             distance_tolerance)
        dist_calcs[qi] = stats.dist_calcs
        hops[qi] = stats.hops
    elapsed = time.perf_counter() - started
    return recalls, dist_calcs, hops, elapsed


def run_workload(index, ds: Dataset, qs: QuerySet, gt: GroundTruth, k: int,
                 beam_grid, nprobe_grid=None, repeats: int = 6, trim: int = 2,
                 dataset_tag: str = "", base_seed: int = 0,
                 distance_tolerance: bool = False,
                 meta: dict | None = None) -> list[RunRecord]:
    """Execute the workload over a grid of beam widths (and probe counts).

    Each grid point runs `repeats` timed repetitions; the `trim` fastest and
    `trim` slowest are excluded and the mean of the rest is the reported time.
    Recall and distance calculations are asserted identical across
    repetitions. Random seed selection derives one stream per query ordinal
    from base_seed, so reruns reproduce results exactly.
    """
    beam_grid = list(beam_grid)
    if not beam_grid:
        raise ParameterError("beam-width grid must be non-empty")
    if gt.m != qs.m:
        raise ParameterError(f"ground truth covers {gt.m} queries, workload has {qs.m}")
    if gt.k < k:
        raise ParameterError(f"ground truth is {gt.k}-deep but k={k} requested")
    if repeats < 1 or trim < 0 or repeats <= 2 * trim:
        raise ParameterError(f"need repeats > 2*trim, got repeats={repeats}, trim={trim}")
    partitioned = isinstance(index, PartitionedIndex)
    if partitioned:
        nprobes = list(nprobe_grid) if nprobe_grid else [1]
    else:
        nprobes = [1]
        if nprobe_grid:
            raise ParameterError("nprobe grid only applies to a partitioned index")
    if meta is None:
        meta = index.meta if isinstance(index, GraphIndex) else {}
    params = meta.get("params", {})

    records = []
    for L in beam_grid:
        if L < k:
            raise ParameterError(f"grid beam width {L} is below k={k}")
        for nprobe in nprobes:
            times = []
            baseline = None
            for _ in range(repeats):
                recalls, dcs, hops, elapsed = _query_pass(
                    index, ds, qs, gt, k, L, nprobe, base_seed, distance_tolerance)
                times.append(elapsed)
                if baseline is None:
                    baseline = (recalls, dcs, hops)
                else:
                    if not (np.array_equal(baseline[0], recalls)
                            and np.array_equal(baseline[1], dcs)):
                        raise AssertionError(
                            "recall/dist_calcs changed between repetitions")
            mean_time = trimmed_mean(times, trim)
            recalls, dcs, hops = baseline
            records.append(RunRecord(
                dataset=dataset_tag, n=ds.n, d=ds.d,
                builder=meta.get("builder", ""), nd=meta.get("nd", ""),
                ss=meta.get("ss", ""), max_degree=params.get("R", 0),
                build_beam_width=params.get("Lbuild", 0), k=k, beam_width=L,
                nprobe=nprobe, recall=float(recalls.mean()),
                dist_calcs=float(dcs.mean()), hops=float(hops.mean()),
                qps=qs.m / mean_time if mean_time > 0 else float("inf"),
                wall_ms_total=mean_time * 1e3, seed=base_seed))
    return records
