"""Neighborhood diversification: geometric pruning of sorted candidate lists.

Four rules share one greedy scan: candidates are visited in ascending order of
distance to the center and kept only if they pass the rule against every
already-kept node, stopping once max_keep survive.

  nond  keep the first max_keep candidates unconditionally
  rnd   keep iff closer to the center than to every kept node
  rrnd  rnd with a relaxation factor alpha >= 1 on the kept-candidate distance
  mond  keep iff the angle at the center against every kept node exceeds a
        threshold (>= 60 degrees), compared via cosines

Ties reject in every rule. Each kept-candidate distance evaluation counts as
one distance calculation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ParameterError
from .metrics import DistanceCounter

ND_KINDS = ("nond", "rnd", "rrnd", "mond")
_KIND_CODES = {"nond": _kernels.ND_NONE, "rnd": _kernels.ND_RELATIVE,
               "rrnd": _kernels.ND_RELAXED, "mond": _kernels.ND_ANGLE}


@dataclass(frozen=True)
class NDStrategy:
    kind: str = "rnd"
    alpha: float = 1.0  # rrnd only
    min_angle_deg: float = 60.0  # mond only

    def __post_init__(self):
        if self.kind not in ND_KINDS:
            raise ParameterError(f"unknown diversification rule {self.kind!r}")
        if self.kind == "rrnd" and self.alpha < 1.0:
            raise ParameterError(f"relaxation factor must be >= 1, got {self.alpha}")
        if self.kind == "mond" and self.min_angle_deg < 60.0:
            raise ParameterError(f"angle threshold must be >= 60 degrees, "
                                 f"got {self.min_angle_deg}")

    @property
    def kind_code(self) -> int:
        return _KIND_CODES[self.kind]

    @property
    def cos_threshold(self) -> float:
        return math.cos(math.radians(self.min_angle_deg))

    def spec(self) -> str:
        if self.kind == "rrnd":
            return f"rrnd:alpha={self.alpha:g}"
        if self.kind == "mond":
            return f"mond:theta={self.min_angle_deg:g}"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "NDStrategy":
        """Parse the CLI/config form: nond | rnd | rrnd:alpha=1.3 | mond:theta=60."""
        head, _, tail = text.strip().lower().partition(":")
        args = {}
        if tail:
            for item in tail.split(","):
                key, _, value = item.partition("=")
                if not value:
                    raise ParameterError(f"bad strategy argument {item!r} in {text!r}")
                args[key.strip()] = value.strip()
        try:
            if head == "rrnd":
                return cls("rrnd", alpha=float(args.pop("alpha", 1.0)))
            if head == "mond":
                return cls("mond", min_angle_deg=float(args.pop("theta", 60.0)))
        except ValueError as exc:
            raise ParameterError(f"bad numeric value in {text!r}") from exc
        if head in ("nond", "rnd"):
            if args:
                raise ParameterError(f"{head} takes no arguments, got {text!r}")
            return cls(head)
        raise ParameterError(f"unknown diversification rule {text!r}")


def prune(center: np.ndarray, cand_ids: np.ndarray, cand_vectors: np.ndarray,
          cand_dists: np.ndarray, max_keep: int, strategy: NDStrategy,
          counter: DistanceCounter | None = None) -> np.ndarray:
    """Apply a diversification rule to candidates sorted ascending by distance.

    Returns the kept ids, a subsequence of cand_ids of length <= max_keep.
    cand_dists must hold the candidates' distances to the center, ascending.
    """
    center = np.asarray(center, np.float64).ravel()
    cand_ids = np.asarray(cand_ids)
    vecs = np.ascontiguousarray(cand_vectors, np.float64)
    dists = np.asarray(cand_dists, np.float64).ravel()
    if vecs.ndim != 2 or vecs.shape[1] != center.shape[0]:
        raise ParameterError("candidate vectors must be (m, d) matching the center")
    if not (cand_ids.shape[0] == vecs.shape[0] == dists.shape[0]):
        raise ParameterError("candidate ids, vectors, and distances must align")
    if max_keep < 1:
        raise ParameterError(f"max_keep must be >= 1, got {max_keep}")
    if (np.diff(dists) < 0).any():
        raise ParameterError("candidates must be sorted ascending by distance")
    keep_idx, evals, _ = _kernels.prune_vectors(
        vecs, dists, int(max_keep), strategy.kind_code,
        float(strategy.alpha), strategy.cos_threshold)
    if counter is not None:
        counter.add(evals)
    return cand_ids[keep_idx]


def pruning_ratio(candidate_count: int, kept_count: int) -> float:
    """Fractional reduction of a candidate list: (candidates - kept) / candidates."""
    if candidate_count <= 0:
        raise ParameterError(f"candidate count must be > 0, got {candidate_count}")
    if kept_count > candidate_count or kept_count < 0:
        raise ParameterError(f"kept count {kept_count} outside [0, {candidate_count}]")
    return (candidate_count - kept_count) / candidate_count
