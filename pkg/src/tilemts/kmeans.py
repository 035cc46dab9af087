"""K-means over MTS collections.

Lloyd iterations with k-means++ seeding and restarts, plus an exhaustive
oracle for tiny instances.  Nearest-centroid ties go to the lowest cluster
id; medoid ties to the lowest item index.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (EmptyInputError, InvalidConfigError, ShapeError,
                     SizeError)
from .mts import DistanceMode, MTSCollection, pairwise_distances


@dataclass(frozen=True)
class Partition:
    assignment: np.ndarray
    K: int

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)
        if a.size and (a.min() < 0 or a.max() >= self.K):
            raise ValueError("cluster ids must lie in [0, K)")

    @property
    def sizes(self):
        return np.bincount(self.assignment, minlength=self.K)

    def members(self, k):
        return np.flatnonzero(self.assignment == k)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["grid_index", "cluster_id"])
            for i, k in enumerate(self.assignment):
                w.writerow([i, int(k)])

    @classmethod
    def from_csv(cls, path, K=None):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        rows.sort(key=lambda r: int(r["grid_index"]))
        a = np.array([int(r["cluster_id"]) for r in rows], dtype=np.int64)
        return cls(a, int(K if K is not None else a.max() + 1))


@dataclass(frozen=True)
class KMeansConfig:
    K: int = 5
    restarts: int = 10
    max_iter: int = 300
    rel_tol: float = 1e-6
    mode: DistanceMode = DistanceMode.CONCAT_EUCLIDEAN
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", DistanceMode(self.mode))
        if self.K < 1 or self.restarts < 1 or self.max_iter < 1:
            raise InvalidConfigError("K, restarts and max_iter must be >= 1")


@dataclass
class KMeansResult:
    partition: Partition
    centroids: np.ndarray  # (K, T, d)
    error: float
    iterations: int
    best_restart: int
    history: list = field(default_factory=list)
    histories: list = field(default_factory=list)

    def save(self, prefix, seed=None):
        """JSON summary, assignment CSV and centroid array file under ``prefix``."""
        prefix = Path(prefix)
        prefix.with_suffix(".json").write_text(json.dumps({
            "K": self.partition.K, "error": self.error, "iterations": self.iterations,
            "best_restart": self.best_restart, "seed": seed}, indent=2))
        self.partition.to_csv(prefix.with_name(prefix.name + "_assignment.csv"))
        MTSCollection(self.centroids, "centroids").save(prefix.with_name(prefix.name + "_centroids"))

    @classmethod
    def load(cls, prefix):
        prefix = Path(prefix)
        meta = json.loads(prefix.with_suffix(".json").read_text())
        part = Partition.from_csv(prefix.with_name(prefix.name + "_assignment.csv"), meta["K"])
        cents = MTSCollection.load(prefix.with_name(prefix.name + "_centroids")).values
        return cls(part, cents, meta["error"], meta["iterations"], meta["best_restart"])


def _values(coll):
    return np.asarray(getattr(coll, "values", coll), dtype=np.float64)


def centroid(items):
    """Elementwise mean of a stack of MTS ``(n, T, d)``."""
    items = _values(items)
    if len(items) == 0:
        raise EmptyInputError("centroid of an empty cluster")
    return items.mean(axis=0)


def medoid(items, center, mode=DistanceMode.CONCAT_EUCLIDEAN, indices=None):
    """Index of the member closest to ``center``.

    With ``indices`` the returned value is ``indices[argmin]``; otherwise a
    position within ``items``.
    """
    items = _values(items)
    if len(items) == 0:
        raise EmptyInputError("medoid of an empty cluster")
    d = pairwise_distances(items, _values(center)[None], mode)[:, 0]
    pos = int(np.argmin(d))
    return int(indices[pos]) if indices is not None else pos


def kmeans_error(coll, partition, centroids, mode=DistanceMode.CONCAT_EUCLIDEAN):
    X = _values(coll)
    a = np.asarray(getattr(partition, "assignment", partition))
    if len(a) != len(X):
        raise ShapeError(f"assignment has length {len(a)}, collection has {len(X)} items")
    C = _values(centroids)
    D = pairwise_distances(X, C, mode)
    return float(np.sum(D[np.arange(len(X)), a] ** 2))


def kmeanspp_init(coll, K, rng, mode=DistanceMode.CONCAT_EUCLIDEAN):
    """k-means++ seeding; returns ``(centroids, chosen_indices)``.

    ``rng`` is a numpy Generator or an integer seed.
    """
    X = _values(coll)
    m = len(X)
    if K > m:
        raise InvalidConfigError(f"K={K} exceeds the number of items m={m}")
    rng = np.random.default_rng(rng)
    chosen = [int(rng.integers(m))]
    d2 = pairwise_distances(X, X[chosen[0]][None], mode)[:, 0] ** 2
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(m, p=d2 / total))
        else:
            # every remaining item coincides with a chosen one
            free = np.setdiff1d(np.arange(m), chosen)
            nxt = int(rng.choice(free))
        chosen.append(nxt)
        d2 = np.minimum(d2, pairwise_distances(X, X[nxt][None], mode)[:, 0] ** 2)
    return X[chosen].copy(), chosen


def _means(X, a, K, old):
    C = old.copy()
    for k in range(K):
        mask = a == k
        if mask.any():
            C[k] = X[mask].mean(axis=0)
    return C


def _repair_empty(a, D, K):
    """Give every empty cluster the point farthest from its own centroid."""
    a = a.copy()
    sizes = np.bincount(a, minlength=K)
    for k in np.flatnonzero(sizes == 0):
        own = D[np.arange(len(a)), a]
        movable = sizes[a] > 1
        if not movable.any():
            break
        cand = np.where(movable, own, -np.inf)
        i = int(np.argmax(cand))
        sizes[a[i]] -= 1
        a[i] = k
        sizes[k] += 1
    return a


def _lloyd_run(X, C, K, cfg):
    D = pairwise_distances(X, C, cfg.mode)
    a = _repair_empty(np.argmin(D, axis=1), D, K)
    C = _means(X, a, K, C)
    err = kmeans_error(X, a, C, cfg.mode)
    history = [err]
    it = 1
    while it < cfg.max_iter:
        D = pairwise_distances(X, C, cfg.mode)
        new_a = _repair_empty(np.argmin(D, axis=1), D, K)
        if np.array_equal(new_a, a):
            break
        a = new_a
        C = _means(X, a, K, C)
        new_err = kmeans_error(X, a, C, cfg.mode)
        history.append(new_err)
        it += 1
        if err == 0 or (err - new_err) <= cfg.rel_tol * err:
            err = new_err
            break
        err = new_err
    return a, C, err, it, history


def lloyd(coll, cfg, init=None):
    """Best-of-restarts Lloyd clustering.

    ``init`` optionally supplies starting centroids ``(K, T, d)`` for a single
    warm-started run instead of k-means++ restarts.
    """
    X = _values(coll)
    m = len(X)
    K = cfg.K
    if K > m:
        raise InvalidConfigError(f"K={K} exceeds the number of items m={m}")
    if init is not None:
        starts = [np.asarray(init, dtype=np.float64)]
    else:
        seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
        starts = [kmeanspp_init(X, K, np.random.default_rng(s), cfg.mode)[0] for s in seeds]
    best = None
    histories = []
    for r, C0 in enumerate(starts):
        a, C, err, it, hist = _lloyd_run(X, C0, K, cfg)
        histories.append(hist)
        if best is None or err < best[2]:
            best = (a, C, err, it, r, hist)
    a, C, err, it, r, hist = best
    return KMeansResult(Partition(a, K), C, err, it, r, hist, histories)


def _set_partitions(m, K):
    """Restricted growth strings of length m using exactly K labels."""
    a = [0] * m

    def rec(i, used):
        if m - i < K - used:
            return
        if i == m:
            if used == K:
                yield tuple(a)
            return
        for lab in range(min(used + 1, K)):
            a[i] = lab
            yield from rec(i + 1, max(used, lab + 1))

    yield from rec(0, 0)


def brute_force_kmeans(coll, K, mode=DistanceMode.CONCAT_EUCLIDEAN, max_items=10):
    """Global minimum of the K-means error over every partition into K nonempty
    clusters (centroids are cluster means)."""
    X = _values(coll)
    m = len(X)
    if m > max_items:
        raise SizeError(f"exhaustive search limited to m <= {max_items}, got {m}")
    if K > m or K < 1:
        raise InvalidConfigError(f"need 1 <= K <= m, got K={K}, m={m}")
    best_err, best_a = np.inf, None
    for a in _set_partitions(m, K):
        a = np.array(a)
        C = np.stack([X[a == k].mean(axis=0) for k in range(K)])
        err = kmeans_error(X, a, C, mode)
        if err < best_err:
            best_err, best_a = err, a
    return Partition(best_a, K), float(best_err)
