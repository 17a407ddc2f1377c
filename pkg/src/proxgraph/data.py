"""Vector dataset and query-workload handling.

Datasets are dense row-major float32 matrices. On-disk containers follow the
texmex conventions: every record is a little-endian int32 dimension header
followed by the payload (float32 for fvecs, uint8 for bvecs, int32 for ivecs).
A headerless raw-f32 format is supported when the dimension is supplied out
of band. bvecs/ivecs payloads are widened to float32 at load; all downstream
math runs on single-precision values.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError, ParameterError, StorageError

FORMATS = ("fvecs", "bvecs", "ivecs", "raw-f32")


def _as_matrix(values: np.ndarray, what: str) -> np.ndarray:
    values = np.ascontiguousarray(values, dtype=np.float32)
    if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
        raise ParameterError(f"{what} must be a non-empty 2-d matrix, got shape {values.shape}")
    if not np.isfinite(values).all():
        raise DataError(f"{what} contains non-finite values")
    return values


@dataclass(frozen=True)
class Dataset:
    """n vectors of dimension d, stored contiguously as float32 rows."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_matrix(self.values, "dataset"))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.values[i]


@dataclass(frozen=True)
class QueryProvenance:
    """Where a query workload came from: a file, noise around base rows, or a generator."""

    kind: str  # "file" | "noise" | "synthetic"
    row_ids: np.ndarray | None = None  # base rows perturbed (noise only)
    sigma2: float | None = None
    exponent: float | None = None


@dataclass(frozen=True)
class QuerySet:
    """m query vectors plus a record of how they were produced."""

    values: np.ndarray
    provenance: QueryProvenance = field(default=QueryProvenance("file"))

    def __post_init__(self):
        object.__setattr__(self, "values", _as_matrix(self.values, "query set"))

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for the skewed synthetic generator (see gen_powerlaw)."""

    n: int
    d: int
    exponent: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ParameterError("synthetic spec needs n >= 1 and d >= 1")
        if self.exponent < 0:
            raise ParameterError(f"power-law exponent must be >= 0, got {self.exponent}")


# ---------------------------------------------------------------------------
# binary container readers / writers
# ---------------------------------------------------------------------------


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc


def _write_bytes(path: str, payload: bytes) -> None:
    try:
        with open(path, "wb") as f:
            f.write(payload)
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def _record_matrix(raw: bytes, path: str, item_size: int) -> tuple[np.ndarray, int]:
    """Split a headered container into (record matrix, d); validates all headers."""
    if len(raw) < 4:
        raise StorageError(f"{path}: file too short for a record header")
    d = int(np.frombuffer(raw[:4], "<i4")[0])
    if d < 1:
        raise FormatError(f"{path}: nonsensical dimension header {d}")
    record = 4 + item_size * d
    if len(raw) % record != 0:
        raise StorageError(f"{path}: truncated file ({len(raw)} bytes, record size {record})")
    n = len(raw) // record
    rows = np.frombuffer(raw, np.uint8).reshape(n, record)
    headers = rows[:, :4].copy().view("<i4").ravel()
    if not (headers == d).all():
        bad = int(np.nonzero(headers != d)[0][0])
        raise FormatError(f"{path}: inconsistent dimension header at record {bad}")
    return rows[:, 4:], d


def read_fvecs(path: str) -> np.ndarray:
    payload, d = _record_matrix(_read_bytes(path), path, 4)
    return np.ascontiguousarray(payload).view("<f4").reshape(-1, d).astype(np.float32)


def read_bvecs(path: str) -> np.ndarray:
    payload, d = _record_matrix(_read_bytes(path), path, 1)
    return payload.astype(np.float32)


def read_ivecs(path: str) -> np.ndarray:
    """Integer records (ivecs); returned as int32 without widening."""
    payload, d = _record_matrix(_read_bytes(path), path, 4)
    return np.ascontiguousarray(payload).view("<i4").reshape(-1, d)


def _headered_bytes(values: np.ndarray, payload_dtype: str) -> bytes:
    n, d = values.shape
    body = np.ascontiguousarray(values, dtype=payload_dtype).reshape(n, -1).view(np.uint8)
    head = np.full((n, 1), d, "<i4").view(np.uint8)
    return np.hstack([head.reshape(n, 4), body.reshape(n, -1)]).tobytes()


def write_fvecs(path: str, values: np.ndarray) -> None:
    _write_bytes(path, _headered_bytes(np.asarray(values, np.float32), "<f4"))


def write_bvecs(path: str, values: np.ndarray) -> None:
    values = np.asarray(values)
    as_float = values.astype(np.float32)
    if not ((as_float >= 0) & (as_float <= 255) & (as_float == np.floor(as_float))).all():
        raise DataError("bvecs payload must be whole numbers in [0, 255]")
    _write_bytes(path, _headered_bytes(as_float.astype(np.uint8), "u1"))


def write_ivecs(path: str, values: np.ndarray) -> None:
    _write_bytes(path, _headered_bytes(np.asarray(values, "<i4"), "<i4"))


def read_raw_f32(path: str, d: int, n: int | None = None) -> np.ndarray:
    if d is None or d < 1:
        raise ParameterError("raw-f32 requires a positive dimension")
    raw = _read_bytes(path)
    if len(raw) % (4 * d) != 0:
        raise StorageError(f"{path}: size {len(raw)} is not a multiple of {4 * d}")
    rows = len(raw) // (4 * d)
    if n is not None and n != rows:
        raise ParameterError(f"raw-f32 metadata says n={n} but file holds {rows} rows")
    return np.frombuffer(raw, "<f4").reshape(rows, d).astype(np.float32)


def write_raw_f32(path: str, values: np.ndarray) -> None:
    _write_bytes(path, np.ascontiguousarray(values, "<f4").tobytes())


def load_vectors(path: str, fmt: str = "fvecs", *, d: int | None = None,
                 n: int | None = None) -> Dataset:
    """Load a dataset from one of the supported containers.

    ivecs payloads are interpreted as floats; raw-f32 needs d (and optionally
    n) since the file carries no headers.
    """
    if fmt not in FORMATS:
        raise ParameterError(f"unknown vector format {fmt!r}; expected one of {FORMATS}")
    if not os.path.exists(path):
        raise StorageError(f"no such file: {path}")
    if fmt == "fvecs":
        values = read_fvecs(path)
    elif fmt == "bvecs":
        values = read_bvecs(path)
    elif fmt == "ivecs":
        values = read_ivecs(path).astype(np.float32)
    else:
        values = read_raw_f32(path, d, n)
    return Dataset(values)


def save_vectors(values: np.ndarray | Dataset, path: str, fmt: str = "fvecs") -> None:
    if isinstance(values, Dataset):
        values = values.values
    if fmt == "fvecs":
        write_fvecs(path, values)
    elif fmt == "bvecs":
        write_bvecs(path, values)
    elif fmt == "ivecs":
        write_ivecs(path, values)
    elif fmt == "raw-f32":
        write_raw_f32(path, values)
    else:
        raise ParameterError(f"unknown vector format {fmt!r}; expected one of {FORMATS}")


# ---------------------------------------------------------------------------
# workload synthesis
# ---------------------------------------------------------------------------


def gen_powerlaw(spec: SyntheticSpec) -> Dataset:
    """Synthesize n x d values with per-coordinate density proportional to x^a on [0, 1).

    Sampling is inverse-CDF: u ** (1 / (a + 1)) for uniform u. An exponent of
    zero leaves the uniform draw untouched, so that case is exactly uniform.
    Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(spec.seed)
    u = rng.random((spec.n, spec.d), dtype=np.float32)
    if spec.exponent == 0:
        return Dataset(u)
    return Dataset(np.power(u, np.float32(1.0 / (spec.exponent + 1.0))))


def gen_powerlaw_queries(spec: SyntheticSpec) -> QuerySet:
    """Query workload drawn from the same generator family as gen_powerlaw."""
    values = gen_powerlaw(spec).values
    return QuerySet(values, QueryProvenance("synthetic", exponent=spec.exponent))


def make_noise_queries(base: Dataset, m: int, sigma2: float, seed: int = 0) -> QuerySet:
    """Pick m distinct base rows (seeded) and add N(0, sigma2) per coordinate.

    The chosen row ids are recorded in the provenance so downstream consumers
    can exclude self-matches. sigma2 = 0 returns the selected rows verbatim.
    """
    if sigma2 < 0:
        raise ParameterError(f"noise variance must be >= 0, got {sigma2}")
    if not 1 <= m <= base.n:
        raise ParameterError(f"need 1 <= m <= n, got m={m}, n={base.n}")
    rng = np.random.default_rng(seed)
    rows = rng.choice(base.n, size=m, replace=False)
    picked = base.values[rows]
    if sigma2 == 0:
        values = picked.copy()
    else:
        noise = rng.normal(0.0, np.sqrt(sigma2), size=picked.shape)
        values = (picked.astype(np.float64) + noise).astype(np.float32)
    return QuerySet(values, QueryProvenance("noise", row_ids=rows.astype(np.int64),
                                            sigma2=float(sigma2)))


def sample_subset(ds: Dataset, m: int, seed: int = 0) -> Dataset:
    """m distinct rows of ds, seeded; a permutation of ds when m = n."""
    if not 1 <= m <= ds.n:
        raise ParameterError(f"need 1 <= m <= n, got m={m}, n={ds.n}")
    rng = np.random.default_rng(seed)
    rows = rng.choice(ds.n, size=m, replace=False)
    return Dataset(ds.values[rows].copy())
