"""Euclidean distance with evaluation counting, plus dataset-hardness measures.

Distance calculations are the efficiency currency of the whole package: every
full evaluation during indexing or search increments a counter so methods can
be compared independently of wall-clock noise. The hardness side estimates,
per query, the local intrinsic dimensionality (from the log-ratios of the k
nearest true distances) and the local relative contrast (mean distance over
the k-th nearest distance).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import Dataset, QuerySet
from .errors import ParameterError


@dataclass
class DistanceCounter:
    """Monotone count of full distance evaluations within a measured scope."""

    calls: int = 0

    def add(self, k: int = 1) -> None:
        self.calls += int(k)

    def reset(self) -> None:
        self.calls = 0


def euclidean(a: np.ndarray, b: np.ndarray, counter: DistanceCounter | None = None) -> float:
    """Euclidean distance between two vectors; counts as one evaluation."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ParameterError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    if counter is not None:
        counter.add(1)
    return float(_kernels.vec_dist(a, b))


def batch_euclidean(q: np.ndarray, rows: np.ndarray,
                    counter: DistanceCounter | None = None) -> np.ndarray:
    """Distances from q to every row; counts one evaluation per row."""
    q = np.asarray(q, dtype=np.float64).ravel()
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != q.shape[0]:
        raise ParameterError(f"dimension mismatch: rows {rows.shape} vs query {q.shape}")
    if counter is not None:
        counter.add(rows.shape[0])
    diff = rows - q
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def lid(sorted_true_dists, k: int) -> float:
    """Local intrinsic dimensionality from the k nearest true distances.

    Expects the distances ascending and strictly positive (callers must
    exclude self-matches). Natural log. Returns +inf when all k distances are
    equal, since the log-ratio sum degenerates to zero.
    """
    dists = np.asarray(sorted_true_dists, dtype=np.float64).ravel()
    if k < 2 or dists.shape[0] != k:
        raise ParameterError(f"need k >= 2 distances, got k={k}, len={dists.shape[0]}")
    if (dists <= 0).any():
        raise ParameterError("distances must be > 0 (exclude query self-matches)")
    if (np.diff(dists) < 0).any():
        raise ParameterError("distances must be sorted ascending")
    total = float(np.log(dists / dists[-1]).sum())
    if total == 0.0:
        return float("inf")
    return -k / total


def lrc(mean_dist: float, kth_dist: float) -> float:
    """Local relative contrast: mean distance over the k-th nearest distance."""
    if kth_dist <= 0:
        raise ParameterError(f"k-th distance must be > 0, got {kth_dist}")
    return float(mean_dist) / float(kth_dist)


@dataclass
class ComplexityReport:
    """Aggregated hardness over a query workload.

    `excluded` counts queries that contributed no finite local-dimensionality
    value: those skipped because they coincide with a data point (distance 0,
    also dropped from the contrast mean) plus those whose estimate was +inf.
    """

    mean_lid: float
    mean_lrc: float
    excluded: int
    per_query_lid: np.ndarray = field(repr=False, default=None)
    per_query_lrc: np.ndarray = field(repr=False, default=None)


def dataset_complexity(ds: Dataset, queries: QuerySet, k: int,
                       exclude_ids: np.ndarray | None = None) -> ComplexityReport:
    """Mean LID / LRC over a workload using exact full-scan distances.

    When the workload was sampled from the dataset itself, pass the source row
    ids so self-matches are masked instead of poisoning the estimates.
    """
    if ds.d != queries.d:
        raise ParameterError(f"dimension mismatch: dataset d={ds.d}, queries d={queries.d}")
    if exclude_ids is not None:
        exclude_ids = np.asarray(exclude_ids)
        if exclude_ids.shape[0] != queries.m:
            raise ParameterError("exclude_ids must provide one row id per query")
    usable = ds.n - (0 if exclude_ids is None else 1)
    if not 2 <= k <= usable:
        raise ParameterError(f"need 2 <= k <= {usable}, got k={k}")

    base = ds.values.astype(np.float64)
    lids = np.full(queries.m, np.nan)
    lrcs = np.full(queries.m, np.nan)
    excluded = 0
    for qi in range(queries.m):
        q = queries.values[qi].astype(np.float64)
        diff = base - q
        dists = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        if exclude_ids is not None:
            dists = np.delete(dists, int(exclude_ids[qi]))
        nearest = np.sort(np.partition(dists, k - 1)[:k])
        if nearest[0] <= 0.0:
            excluded += 1  # query coincides with a data point; skip entirely
            continue
        lrcs[qi] = lrc(float(dists.mean()), float(nearest[-1]))
        value = lid(nearest, k)
        if np.isinf(value):
            excluded += 1
            continue
        lids[qi] = value

    finite_lids = lids[np.isfinite(lids)]
    finite_lrcs = lrcs[np.isfinite(lrcs)]
    return ComplexityReport(
        mean_lid=float(finite_lids.mean()) if finite_lids.size else float("nan"),
        mean_lrc=float(finite_lrcs.mean()) if finite_lrcs.size else float("nan"),
        excluded=excluded,
        per_query_lid=lids,
        per_query_lrc=lrcs,
    )
