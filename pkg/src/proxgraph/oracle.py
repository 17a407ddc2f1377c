"""Exact k-NN ground truth by brute force; the arbiter behind every recall number."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, QuerySet, read_fvecs, read_ivecs, write_fvecs, write_ivecs
from .errors import ParameterError


@dataclass(frozen=True)
class GroundTruth:
    """Per-query ascending (id, distance) tables of width k."""

    ids: np.ndarray  # (m, k) int32
    dists: np.ndarray  # (m, k) float32

    def __post_init__(self):
        if self.ids.shape != self.dists.shape or self.ids.ndim != 2:
            raise ParameterError("ground truth ids/dists must share an (m, k) shape")

    @property
    def m(self) -> int:
        return self.ids.shape[0]

    @property
    def k(self) -> int:
        return self.ids.shape[1]

    def row(self, qi: int) -> tuple[np.ndarray, np.ndarray]:
        return self.ids[qi], self.dists[qi]


def _scan_dists(base64: np.ndarray, q: np.ndarray) -> np.ndarray:
    diff = base64 - np.asarray(q, dtype=np.float64)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def exact_knn(ds: Dataset, q: np.ndarray, k: int,
              exclude_id: int | None = None) -> list[tuple[int, float]]:
    """The k nearest dataset rows to q, ascending, ties broken by smaller id.

    exclude_id masks one row (the query's own source when it was sampled from
    the dataset).
    """
    limit = ds.n - (0 if exclude_id is None else 1)
    if not 1 <= k <= limit:
        raise ParameterError(f"need 1 <= k <= {limit}, got k={k}")
    q = np.asarray(q, dtype=np.float64).ravel()
    if q.shape[0] != ds.d:
        raise ParameterError(f"dimension mismatch: query d={q.shape[0]}, dataset d={ds.d}")
    dists = _scan_dists(ds.values.astype(np.float64), q)
    if exclude_id is not None:
        dists[int(exclude_id)] = np.inf
    order = np.argsort(dists, kind="stable")[:k]
    return [(int(i), float(dists[i])) for i in order]


def ground_truth(ds: Dataset, qs: QuerySet, k: int,
                 exclude_ids: np.ndarray | None = None) -> GroundTruth:
    """Exact k-NN table for a whole workload; row i equals exact_knn(ds, qs[i], k).

    Self-match masking is the caller's call: pass exclude_ids (one row per
    query) when the workload was sampled from the dataset itself.
    """
    if ds.d != qs.d:
        raise ParameterError(f"dimension mismatch: dataset d={ds.d}, queries d={qs.d}")
    if exclude_ids is not None and len(exclude_ids) != qs.m:
        raise ParameterError("exclude_ids must provide one row id per query")
    limit = ds.n - (0 if exclude_ids is None else 1)
    if not 1 <= k <= limit:
        raise ParameterError(f"need 1 <= k <= {limit}, got k={k}")

    base64 = ds.values.astype(np.float64)
    ids = np.empty((qs.m, k), np.int32)
    dists = np.empty((qs.m, k), np.float32)
    for qi in range(qs.m):
        row_dists = _scan_dists(base64, qs.values[qi])
        if exclude_ids is not None:
            row_dists[int(exclude_ids[qi])] = np.inf
        order = np.argsort(row_dists, kind="stable")[:k]
        ids[qi] = order
        dists[qi] = row_dists[order]
    return GroundTruth(ids, dists)


def dataset_ground_truth(ds: Dataset, k: int) -> GroundTruth:
    """k-NN table with the dataset as its own workload, self-matches excluded."""
    qs = QuerySet(ds.values)
    return ground_truth(ds, qs, k, exclude_ids=np.arange(ds.n))


def save_ground_truth(gt: GroundTruth, ids_path: str, dists_path: str) -> None:
    """Persist ids as ivecs and distances as fvecs with matching record order."""
    write_ivecs(ids_path, gt.ids)
    write_fvecs(dists_path, gt.dists)


def load_ground_truth(ids_path: str, dists_path: str) -> GroundTruth:
    ids = read_ivecs(ids_path)
    dists = read_fvecs(dists_path)
    if ids.shape != dists.shape:
        raise ParameterError(
            f"ground truth shape mismatch: ids {ids.shape} vs dists {dists.shape}")
    return GroundTruth(ids.astype(np.int32), dists)
