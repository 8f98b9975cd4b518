"""Nearest-neighbour agreement filter that turns the excluded set into the reliable subset."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class ConsistencyConfig:
    n_neighbors: int = 6

    def __post_init__(self):
        if self.n_neighbors < 1:
            raise ValueError("n_neighbors must be >= 1")


def knn(query: int, pool: np.ndarray, n_neighbors: int, ids: np.ndarray | None = None) -> np.ndarray:
    """Indices of the ``n_neighbors`` pool members closest to ``pool[query]``.

    The query itself is excluded. Distance ties go to the smaller sample id
    (``ids``, defaulting to the storage index), so the result does not depend
    on storage order.
    """
    pool = np.asarray(pool, dtype=float)
    if pool.ndim == 1:
        pool = pool[:, None]
    n = len(pool)
    if n < n_neighbors + 1:
        raise ValueError(f"pool of {n} samples is too small for {n_neighbors} neighbours")
    ids = np.arange(n) if ids is None else np.asarray(ids)
    diff = pool - pool[query]
    dist = np.einsum("ij,ij->i", diff, diff)
    dist[query] = np.inf
    order = np.lexsort((ids, dist))
    return order[:n_neighbors]


@dataclass
class ConsistencyResult:
    members: np.ndarray  # positions in the pool of the D_p members, in D_p order
    n_p: np.ndarray  # neighbours carrying the unknown pseudo-label
    retained: np.ndarray  # bool per member


def consistent_filter(pool: np.ndarray, excluded: np.ndarray, config: ConsistencyConfig | None = None,
                      ids: np.ndarray | None = None) -> ConsistencyResult:
    """Keep excluded samples whose neighbours are mostly excluded too.

    ``pool`` holds the features of every test sample and ``excluded`` flags
    the pseudo-labeled ones. A member is retained iff more than half of its
    neighbours are flagged.
    """
    config = config or ConsistencyConfig()
    excluded = np.asarray(excluded, dtype=bool)
    members = np.flatnonzero(excluded)
    n_p = np.array([excluded[knn(i, pool, config.n_neighbors, ids)].sum() for i in members], dtype=int)
    retained = n_p > config.n_neighbors / 2.0
    return ConsistencyResult(members, n_p, retained)


def write_audit(path: str | Path, ids, s, zeta, n_p, retained) -> None:
    """One row per pseudo-labeled sample: id, score, threshold, flagged neighbours, kept flag."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "score", "threshold", "n_p", "retained"])
        for row in zip(ids, s, zeta, n_p, retained):
            i, a, b, c, r = row
            w.writerow([int(i), f"{a:.17g}", f"{b:.17g}", int(c), int(bool(r))])
