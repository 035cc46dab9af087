"""Tools for reading a clustering: colors, maps, projections, trees and scores."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import EmptyInputError, InvalidInputError, RenderError, ShapeError
from .mts import DistanceMode, pairwise_distances


def _values(x):
    return np.asarray(getattr(x, "values", x), dtype=np.float64)


def _labels(p):
    return np.asarray(getattr(p, "assignment", p))


def _orient(vectors):
    """Flip each row so that its largest-magnitude entry is positive."""
    vectors = vectors.copy()
    for i, v in enumerate(vectors):
        j = int(np.argmax(np.abs(v)))
        if v[j] < 0:
            vectors[i] = -v
    return vectors


# ---------------------------------------------------------------------------
# PCA colors

@dataclass(frozen=True)
class PCABasis:
    mean: np.ndarray         # (D,)
    axes: np.ndarray         # (3, D), zero rows where degenerate
    variances: np.ndarray    # (3,)
    proj_min: np.ndarray     # (3,)
    proj_max: np.ndarray     # (3,)
    degenerate: np.ndarray   # (3,) bool

    def project(self, items):
        X = _values(items).reshape(len(items), -1)
        if X.shape[1] != self.mean.size:
            raise ShapeError(f"basis fitted on {self.mean.size}-dim MTS, got {X.shape[1]}")
        return (X - self.mean) @ self.axes.T


def pca_fit(coll, n_components=3, rel_eps=1e-10):
    """Principal axes of the flattened MTS collection."""
    X = _values(coll)
    X = X.reshape(len(X), -1)
    m, D = X.shape
    if m < 2:
        raise InvalidInputError("PCA needs at least two items")
    mean = X.mean(axis=0)
    Xc = X - mean
    # right singular vectors of the centered data = covariance eigenvectors
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    var = s ** 2 / (m - 1)
    axes = np.zeros((n_components, D))
    variances = np.zeros(n_components)
    k = min(n_components, len(var))
    axes[:k] = _orient(Vt[:k])
    variances[:k] = var[:k]
    top = variances[0] if variances[0] > 0 else 1.0
    degenerate = variances <= rel_eps * top
    degenerate[0] = variances[0] <= 0
    axes[degenerate] = 0.0
    variances[degenerate] = 0.0
    proj = Xc @ axes.T
    return PCABasis(mean, axes, variances, proj.min(axis=0), proj.max(axis=0), degenerate)


@dataclass(frozen=True)
class ClusterColorMap:
    colors: np.ndarray  # (K, 3) uint8

    def __len__(self):
        return len(self.colors)

    def hex(self):
        return ["#%02x%02x%02x" % tuple(int(v) for v in c) for c in self.colors]


def centroid_colors(basis, centroids):
    """First three principal components of each centroid, min-max scaled to
    0..255 with the fitted collection's range."""
    proj = basis.project(_values(centroids))
    span = basis.proj_max - basis.proj_min
    flat = basis.degenerate | (span <= 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        scaled = (proj - basis.proj_min) / np.where(flat, 1.0, span) * 255.0
    scaled = np.clip(np.round(scaled), 0, 255)
    scaled[:, flat] = 128
    return ClusterColorMap(scaled.astype(np.uint8))


def render_cluster_map(grid, partition, colors):
    """RGB image ``(rows*s, cols*s, 3)`` with every cell painted its cluster color."""
    a = _labels(partition)
    if len(a) != grid.m:
        raise ShapeError(f"assignment length {len(a)} != grid size {grid.m}")
    cmap = np.asarray(getattr(colors, "colors", colors), dtype=np.uint8)
    if a.size and (a.max() >= len(cmap) or a.min() < 0):
        raise RenderError(f"no color for cluster id {int(a.max())}")
    cells = cmap[a].reshape(grid.rows, grid.cols, 3)
    s = grid.tile_size
    return np.repeat(np.repeat(cells, s, axis=0), s, axis=1)


def save_png(path, image):
    Image.fromarray(np.asarray(image, dtype=np.uint8), "RGB").save(path, optimize=False)


# ---------------------------------------------------------------------------
# MDS

@dataclass(frozen=True)
class Projection2D:
    points: np.ndarray        # (m, 2)
    eigenvalues: np.ndarray   # descending, all of them
    stress: float
    non_euclidean: bool


def classical_mds(D, dims=2, tol=1e-9):
    """Torgerson scaling of a distance matrix."""
    D = np.asarray(D, dtype=np.float64)
    n = len(D)
    if n < 3:
        raise InvalidInputError("MDS needs at least three points")
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ (D ** 2) @ J
    B = (B + B.T) / 2
    evals, evecs = np.linalg.eigh(B)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    scale = max(abs(evals[0]), 1e-300)
    non_euclidean = bool(evals[-1] < -tol * scale)
    vecs = _orient(evecs[:, :dims].T).T
    # eigenvalues within rounding of zero carry no geometry
    lead = np.where(evals[:dims] > tol * scale, evals[:dims], 0.0)
    pts = vecs * np.sqrt(lead)
    Dhat = np.sqrt(np.maximum(np.sum((pts[:, None] - pts[None]) ** 2, axis=-1), 0.0))
    denom = np.sum(D ** 2)
    stress = float(np.sqrt(np.sum((D - Dhat) ** 2) / denom)) if denom > 0 else 0.0
    return Projection2D(pts, evals, stress, non_euclidean)


def mds_project(coll, mode=DistanceMode.CONCAT_EUCLIDEAN):
    X = _values(coll)
    return classical_mds(pairwise_distances(X, X, mode))


# ---------------------------------------------------------------------------
# semantic tree

@dataclass
class SemanticTree:
    sizes: list
    edges: list          # (k, j, length), k < j
    total_weight: float = field(init=False)

    def __post_init__(self):
        self.total_weight = float(sum(e[2] for e in self.edges))

    @property
    def K(self):
        return len(self.sizes)

    def to_dict(self):
        return {"nodes": [{"cluster": k, "size": int(n)} for k, n in enumerate(self.sizes)],
                "edges": [{"a": a, "b": b, "length": float(w)} for a, b, w in self.edges],
                "total_weight": self.total_weight}

    def to_dot(self):
        lines = ["graph semantic_tree {"]
        for k, n in enumerate(self.sizes):
            lines.append(f'  c{k} [label="cluster {k}\\n{int(n)} tiles"];')
        for a, b, w in self.edges:
            lines.append(f'  c{a} -- c{b} [len={w:.6g}, label="{w:.4g}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def prim_mst(W):
    """Minimum spanning tree of a complete graph given its weight matrix."""
    W = np.asarray(W, dtype=np.float64)
    K = len(W)
    in_tree = np.zeros(K, dtype=bool)
    in_tree[0] = True
    best = W[0].copy()
    parent = np.zeros(K, dtype=int)
    edges = []
    for _ in range(K - 1):
        cand = np.where(in_tree, np.inf, best)
        j = int(np.argmin(cand))
        a, b = sorted((int(parent[j]), j))
        edges.append((a, b, float(W[a, b])))
        in_tree[j] = True
        closer = ~in_tree & (W[j] < best)
        best[closer] = W[j][closer]
        parent[closer] = j
    return edges


def semantic_tree(centroids, partition, mode=DistanceMode.CONCAT_EUCLIDEAN):
    C = _values(centroids)
    if len(C) < 2:
        raise InvalidInputError("a semantic tree needs at least two clusters")
    a = _labels(partition)
    sizes = np.bincount(a, minlength=len(C)).tolist()
    return SemanticTree(sizes, prim_mst(pairwise_distances(C, C, mode)))


# ---------------------------------------------------------------------------
# interpolation and representatives

def interpolate(c_a, c_b, w):
    """``w * c_a + (1 - w) * c_b`` for ``w`` in [0, 1]."""
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"interpolation weight must lie in [0, 1], got {w}")
    c_a, c_b = _values(c_a), _values(c_b)
    if c_a.shape != c_b.shape:
        raise ShapeError("centroids differ in shape")
    return w * c_a + (1.0 - w) * c_b


def nearest_sequence(coll, target, mode=DistanceMode.CONCAT_EUCLIDEAN, subset=None):
    """Index of the collection item closest to ``target``; ties go to the lowest."""
    X = _values(coll)
    if len(X) == 0:
        raise EmptyInputError("empty collection")
    target = _values(target)
    if target.shape != X.shape[1:]:
        raise ShapeError(f"target shape {target.shape} != item shape {X.shape[1:]}")
    idx = np.arange(len(X)) if subset is None else np.asarray(subset)
    d = pairwise_distances(X[idx], target[None], mode)[:, 0]
    return int(idx[int(np.argmin(d))])


# ---------------------------------------------------------------------------
# validity scores

def _check_labels(points, labels):
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    X = X.reshape(len(X), -1)
    a = _labels(labels)
    if len(a) != len(X):
        raise ShapeError("labels and points differ in length")
    uniq, inv = np.unique(a, return_inverse=True)
    K = len(uniq)
    if K < 2:
        raise InvalidInputError("validity scores need at least two clusters")
    if len(X) <= K:
        raise InvalidInputError(f"need more points than clusters (m={len(X)}, K={K})")
    return X, inv, K


def silhouette_samples(points, labels, chunk=2048):
    X, inv, K = _check_labels(points, labels)
    n = len(X)
    onehot = np.zeros((n, K))
    onehot[np.arange(n), inv] = 1.0
    sizes = onehot.sum(axis=0)
    out = np.zeros(n)
    for start in range(0, n, chunk):
        rows = slice(start, start + chunk)
        diff = X[rows, None, :] - X[None, :, :]
        D = np.sqrt(np.sum(diff ** 2, axis=-1))
        sums = D @ onehot  # (chunk, K)
        own = inv[rows]
        own_size = sizes[own]
        r = np.arange(len(own))
        with np.errstate(invalid="ignore", divide="ignore"):
            a = sums[r, own] / np.maximum(own_size - 1, 1)
            means = sums / sizes
        means[r, own] = np.inf
        b = means.min(axis=1)
        denom = np.maximum(a, b)
        with np.errstate(invalid="ignore", divide="ignore"):
            s = np.where(denom > 0, (b - a) / denom, 0.0)
        s[own_size == 1] = 0.0
        out[rows] = s
    return out


def silhouette(points, labels):
    return float(np.mean(silhouette_samples(points, labels)))


def calinski_harabasz(points, labels):
    """Between/within dispersion ratio; ``inf`` (with a warning) when the
    within-cluster dispersion is zero."""
    X, inv, K = _check_labels(points, labels)
    n = len(X)
    mu = X.mean(axis=0)
    B = W = 0.0
    for k in range(K):
        Xk = X[inv == k]
        mk = Xk.mean(axis=0)
        B += len(Xk) * np.sum((mk - mu) ** 2)
        W += np.sum((Xk - mk) ** 2)
    if W == 0:
        warnings.warn("zero within-cluster dispersion; Calinski-Harabasz is infinite")
        return math.inf
    return float((B / (K - 1)) / (W / (n - K)))


@dataclass(frozen=True)
class ValidityScores:
    silhouette: float
    calinski_harabasz: float
    space: str

    @property
    def ch_degenerate(self):
        return math.isinf(self.calinski_harabasz)

    def to_dict(self):
        ch = self.calinski_harabasz
        return {"silhouette": self.silhouette,
                "calinski_harabasz": None if math.isinf(ch) else ch,
                "calinski_harabasz_infinite": math.isinf(ch), "space": self.space}


def geographic_space_scores(grid, partition):
    """Scores computed on tile-center pixel coordinates only."""
    pts = grid.centers()
    return ValidityScores(silhouette(pts, partition), calinski_harabasz(pts, partition),
                          "geographic-2D")


def embedded_space_scores(coll, partition):
    X = _values(coll)
    X = X.reshape(len(X), -1)
    return ValidityScores(silhouette(X, partition), calinski_harabasz(X, partition), "embedded")


def adjusted_rand_index(a, b):
    a, b = _labels(a), _labels(b)
    if len(a) != len(b):
        raise ShapeError("labelings differ in length")
    n = len(a)
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)

    def comb2(x):
        x = np.asarray(x, dtype=np.float64)
        return x * (x - 1) / 2.0

    index = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
