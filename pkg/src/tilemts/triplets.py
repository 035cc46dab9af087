"""Training triplets: geographic neighborhoods and cluster neighborhoods.

All three tiles of a triplet come from the same timestamp.  Locations are
top-left pixel coordinates ``(x, y)``; cluster-mode triplets also record the
grid indices they were drawn from.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, InvalidConfigError, InvalidPartitionError
from .mts import DistanceMode, pairwise_distances


@dataclass(frozen=True)
class Triplet:
    t: int
    anchor: tuple
    neighbor: tuple
    distant: tuple
    cells: tuple | None = None


@dataclass(frozen=True)
class GeoSamplerConfig:
    N: int = 2000
    r: float = 100
    tile_size: int = 100
    seed: int = 0
    per_timestamp_quota: bool = False

    def __post_init__(self):
        if self.N < 1 or self.r < 1 or self.tile_size < 1:
            raise InvalidConfigError("N, r and tile_size must be >= 1")


@dataclass(frozen=True)
class ClusterSamplerConfig:
    M: int = 1000
    seed: int = 0
    max_resamples: int = 100

    def __post_init__(self):
        if self.M < 1:
            raise InvalidConfigError("M must be >= 1")


def _timestamps(rng, T, n, quota):
    if not quota:
        return rng.integers(T, size=n)
    ts = np.tile(np.arange(T), math.ceil(n / T))[:n]
    return rng.permutation(ts)


def sample_geo_triplets(seq, cfg):
    """Anchor anywhere, neighbor within ``r`` pixels (center to center),
    distant farther than ``r``."""
    s, r = cfg.tile_size, cfg.r
    nx, ny = seq.width - s + 1, seq.height - s + 1
    if nx < 1 or ny < 1:
        raise GeometryError(f"scene {seq.width}x{seq.height} is smaller than tile size {s}")
    if max(nx, ny) < 2:
        raise GeometryError("only one tile position exists; no neighbor can be drawn")
    # worst case is an anchor in the middle of the image
    if math.hypot((nx - 1) / 2, (ny - 1) / 2) <= r:
        raise GeometryError(f"scene too small to place a distant tile beyond r={r}")
    rng = np.random.default_rng(cfg.seed)
    ts = _timestamps(rng, seq.T, cfg.N, cfg.per_timestamp_quota)
    ri = int(math.floor(r))
    out = []
    for t in ts:
        ax, ay = int(rng.integers(nx)), int(rng.integers(ny))
        x0, x1 = max(0, ax - ri), min(nx - 1, ax + ri)
        y0, y1 = max(0, ay - ri), min(ny - 1, ay + ri)
        while True:
            bx, by = int(rng.integers(x0, x1 + 1)), int(rng.integers(y0, y1 + 1))
            if (bx, by) != (ax, ay) and math.hypot(bx - ax, by - ay) <= r:
                break
        for _ in range(1000):
            cx, cy = int(rng.integers(nx)), int(rng.integers(ny))
            if math.hypot(cx - ax, cy - ay) > r:
                break
        else:
            gx, gy = np.meshgrid(np.arange(nx), np.arange(ny))
            far = np.flatnonzero(np.hypot(gx - ax, gy - ay).ravel() > r)
            if far.size == 0:
                raise GeometryError(f"no position beyond r={r} from anchor {(ax, ay)}")
            pick = int(rng.choice(far))
            cx, cy = int(gx.ravel()[pick]), int(gy.ravel()[pick])
        out.append(Triplet(int(t), (ax, ay), (bx, by), (cx, cy)))
    return out


def _check_partition(partition):
    if partition.K < 2:
        raise InvalidPartitionError("cluster triplets need K >= 2")
    if np.any(partition.sizes == 0):
        raise InvalidPartitionError("every cluster must be nonempty")


def distant_cluster_distribution(partition, centroids, k, mode=DistanceMode.CONCAT_EUCLIDEAN):
    """Probabilities over clusters ``j`` for the distant draw, zero at ``k``.

    Proportional to ``|P_j| * d(c_k, c_j)``; when every other centroid sits on
    ``c_k`` it falls back to size-proportional.
    """
    _check_partition(partition)
    C = np.asarray(centroids, dtype=np.float64)
    sizes = partition.sizes.astype(np.float64)
    d = pairwise_distances(C, C[k][None], mode)[:, 0]
    w = sizes * d
    w[k] = 0.0
    if w.sum() <= 0:
        w = sizes.copy()
        w[k] = 0.0
    return w / w.sum()


def sample_cluster_triplets(seq, grid, partition, centroids, cfg,
                            mode=DistanceMode.CONCAT_EUCLIDEAN):
    _check_partition(partition)
    if len(partition.assignment) != grid.m:
        raise InvalidPartitionError("partition length does not match the grid")
    rng = np.random.default_rng(cfg.seed)
    sizes = partition.sizes
    p_k = sizes / sizes.sum()
    members = [partition.members(k) for k in range(partition.K)]
    dist_p = [distant_cluster_distribution(partition, centroids, k, mode)
              for k in range(partition.K)]
    out = []
    for _ in range(cfg.M):
        for _ in range(cfg.max_resamples):
            k = int(rng.choice(partition.K, p=p_k))
            if sizes[k] > 1:
                break
        else:
            raise InvalidPartitionError(
                f"drew singleton clusters {cfg.max_resamples} times in a row")
        ia, ib = (int(v) for v in rng.choice(members[k], size=2, replace=False))
        j = int(rng.choice(partition.K, p=dist_p[k]))
        ic = int(rng.choice(members[j]))
        t = int(rng.integers(seq.T))
        out.append(Triplet(t, grid.top_left(ia), grid.top_left(ib), grid.top_left(ic),
                           cells=(ia, ib, ic)))
    return out


def triplet_tiles(seq, triplets, tile_size):
    """Stack the pixels of each triplet into ``(n, 3, C, s, s)``."""
    s = tile_size
    out = np.empty((len(triplets), 3, seq.channels, s, s))
    stack = seq.stack
    for n, tr in enumerate(triplets):
        for j, (x, y) in enumerate((tr.anchor, tr.neighbor, tr.distant)):
            out[n, j] = stack[tr.t, :, y:y + s, x:x + s]
    return out


def save_triplets_csv(path, triplets):
    cluster_mode = bool(triplets) and triplets[0].cells is not None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if cluster_mode:
            w.writerow(["t", "i_a", "i_b", "i_c"])
            for tr in triplets:
                w.writerow([tr.t, *tr.cells])
        else:
            w.writerow(["t", "ax", "ay", "bx", "by", "cx", "cy"])
            for tr in triplets:
                w.writerow([tr.t, *tr.anchor, *tr.neighbor, *tr.distant])


def load_triplets_csv(path, grid=None):
    """Read either CSV layout; cluster-mode files need ``grid`` for pixel positions."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        if "i_a" in r:
            if grid is None:
                raise ValueError("grid is required to read cluster-mode triplets")
            cells = (int(r["i_a"]), int(r["i_b"]), int(r["i_c"]))
            out.append(Triplet(int(r["t"]), *(grid.top_left(i) for i in cells), cells=cells))
        else:
            out.append(Triplet(int(r["t"]), (int(r["ax"]), int(r["ay"])),
                               (int(r["bx"]), int(r["by"])), (int(r["cx"]), int(r["cy"]))))
    return out
