import itertools
import json
import math

import networkx as nx
import numpy as np
import pytest
from PIL import Image
from sklearn import metrics

from tilemts.analysis import (adjusted_rand_index, calinski_harabasz, centroid_colors,
                              classical_mds, embedded_space_scores, geographic_space_scores,
                              interpolate, mds_project, nearest_sequence, pca_fit, prim_mst,
                              render_cluster_map, save_png, semantic_tree, silhouette,
                              silhouette_samples)
from tilemts.errors import InvalidInputError, RenderError, ShapeError
from tilemts.kmeans import Partition, medoid
from tilemts.mts import MTSCollection, mts_distance, pairwise_distances
from tilemts.raster import decompose_grid


def blobs(seed=0, n=30, sep=50.0, spread=0.5):
    rng = np.random.default_rng(seed)
    X = np.concatenate([rng.normal(0, spread, (n, 2)), rng.normal(sep, spread, (n, 2))])
    return X, np.repeat([0, 1], n)


# --- PCA --------------------------------------------------------------------

def test_pca_line_is_degenerate():
    t = np.linspace(-1, 1, 20)
    X = np.stack([t, 2 * t, -t], axis=1)[:, None, :]
    basis = pca_fit(MTSCollection(X))
    assert basis.variances[0] > 0
    assert basis.degenerate.tolist() == [False, True, True]
    assert np.all(basis.axes[1:] == 0)


def test_pca_axes_orthonormal_and_uncorrelated():
    X = np.random.default_rng(0).normal(size=(200, 3, 4)) * np.arange(1, 13).reshape(3, 4)
    basis = pca_fit(MTSCollection(X))
    np.testing.assert_allclose(basis.axes @ basis.axes.T, np.eye(3), atol=1e-12)
    assert np.all(np.diff(basis.variances) <= 0)
    P = basis.project(X)
    cov = np.cov(P.T)
    assert np.abs(cov - np.diag(np.diag(cov))).max() < 1e-8


def test_pca_sign_convention():
    X = np.random.default_rng(1).normal(size=(50, 2, 3))
    basis = pca_fit(MTSCollection(X))
    for ax in basis.axes:
        assert ax[np.argmax(np.abs(ax))] > 0
    flipped = pca_fit(MTSCollection(-X))
    np.testing.assert_allclose(np.abs(flipped.axes), np.abs(basis.axes), atol=1e-10)
    for ax in flipped.axes:
        assert ax[np.argmax(np.abs(ax))] > 0


def test_pca_beats_random_bases():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(100, 8)) @ rng.normal(size=(8, 8))
    basis = pca_fit(MTSCollection(X[:, None, :]))
    Xc = X - X.mean(0)

    def residual(A):
        return np.sum((Xc - Xc @ A.T @ A) ** 2)

    best = residual(basis.axes)
    for _ in range(200):
        Q, _ = np.linalg.qr(rng.normal(size=(8, 3)))
        assert best <= residual(Q.T) + 1e-9


def test_pca_needs_two_items():
    with pytest.raises(InvalidInputError):
        pca_fit(MTSCollection(np.zeros((1, 2, 2))))


# --- colors -----------------------------------------------------------------

def fitted(seed=3, m=60):
    X = np.random.default_rng(seed).normal(size=(m, 2, 3)) * [[3, 2, 1], [1, 0.5, 0.2]]
    return X, pca_fit(MTSCollection(X))


def test_colors_identical_centroids():
    X, basis = fitted()
    c = centroid_colors(basis, np.stack([X[4], X[4]])).colors
    assert np.array_equal(c[0], c[1])


def test_colors_extremes_of_first_component():
    X, basis = fitted()
    p = basis.project(X)[:, 0]
    cmap = centroid_colors(basis, X[[int(np.argmin(p)), int(np.argmax(p))]])
    assert cmap.colors[:, 0].tolist() == [0, 255]
    assert len(cmap.hex()) == 2 and cmap.hex()[0].startswith("#00")


def test_colors_lipschitz():
    X, basis = fitted()
    span = basis.proj_max - basis.proj_min
    rng = np.random.default_rng(4)
    for _ in range(100):
        a = X[rng.integers(len(X))]
        b = a + rng.normal(0, 0.05, a.shape)
        ca, cb = centroid_colors(basis, np.stack([a, b])).colors.astype(int)
        bound = 255.0 / span * mts_distance(a, b) + 1  # +1 for rounding
        assert np.all(np.abs(ca - cb) <= bound)


def test_colors_translation_invariant():
    X, basis = fitted()
    shift = np.random.default_rng(5).normal(size=X.shape[1:]) * 10
    cents = X[:5]
    moved = pca_fit(MTSCollection(X + shift))
    np.testing.assert_array_equal(centroid_colors(basis, cents).colors,
                                  centroid_colors(moved, cents + shift).colors)


def test_colors_degenerate_channel_is_gray():
    t = np.linspace(0, 1, 10)
    X = np.stack([t, t], axis=1)[:, None, :]
    cmap = centroid_colors(pca_fit(MTSCollection(X)), X[[0, 9]])
    assert cmap.colors[:, 1:].tolist() == [[128, 128], [128, 128]]
    assert cmap.colors[:, 0].tolist() == [0, 255]


# --- rendering --------------------------------------------------------------

COLORS = np.array([[255, 0, 0], [0, 0, 255], [10, 200, 30]], dtype=np.uint8)


def test_render_single_cluster_constant():
    g = decompose_grid(40, 24, 8)
    img = render_cluster_map(g, Partition(np.zeros(g.m, int), 1), COLORS[:1])
    assert img.shape == (24, 40, 3)
    assert np.all(img == COLORS[0])


def test_render_checkerboard():
    g = decompose_grid(32, 32, 8)
    a = np.array([(r + c) % 2 for r in range(4) for c in range(4)])
    img = render_cluster_map(g, Partition(a, 2), COLORS[:2])
    ref = np.kron((np.indices((4, 4)).sum(0) % 2), np.ones((8, 8), int))
    np.testing.assert_array_equal(img, COLORS[ref])


def test_render_probes(tmp_path):
    g = decompose_grid(7 * 6, 5 * 6, 6)
    rng = np.random.default_rng(0)
    a = rng.integers(3, size=g.m)
    img = render_cluster_map(g, Partition(a, 3), COLORS)
    for _ in range(100):
        y, x = int(rng.integers(img.shape[0])), int(rng.integers(img.shape[1]))
        row, col = y // 6, x // 6
        np.testing.assert_array_equal(img[y, x], COLORS[a[row * g.cols + col]])
    save_png(tmp_path / "m.png", img)
    np.testing.assert_array_equal(np.asarray(Image.open(tmp_path / "m.png")), img)


def test_render_missing_color():
    g = decompose_grid(16, 16, 8)
    with pytest.raises(RenderError):
        render_cluster_map(g, Partition(np.array([0, 1, 2, 3]), 4), COLORS)
    with pytest.raises(ShapeError):
        render_cluster_map(g, np.array([0, 1]), COLORS)


# --- MDS --------------------------------------------------------------------

def test_mds_equilateral():
    D = np.ones((3, 3)) - np.eye(3)
    proj = classical_mds(D)
    P = proj.points
    out = np.sqrt(((P[:, None] - P[None]) ** 2).sum(-1))
    np.testing.assert_allclose(out[~np.eye(3, dtype=bool)], 1.0, atol=1e-9)
    assert not proj.non_euclidean


def test_mds_collinear():
    X = np.array([0.0, 1.0, 3.0, 7.0])[:, None, None] * np.ones((1, 1, 2))
    proj = mds_project(MTSCollection(X))
    assert np.abs(proj.points[:, 1]).max() < 1e-9


def test_mds_recovers_2d_configurations():
    rng = np.random.default_rng(6)
    for _ in range(10):
        X = rng.normal(size=(12, 2, 1)) * 5
        proj = mds_project(MTSCollection(X))
        D = pairwise_distances(X)
        P = proj.points
        np.testing.assert_allclose(np.sqrt(((P[:, None] - P[None]) ** 2).sum(-1)), D, atol=1e-9)
        assert proj.stress < 1e-9


def test_mds_deterministic_and_flags():
    X = np.random.default_rng(7).normal(size=(15, 3, 2))
    a, b = mds_project(MTSCollection(X)), mds_project(MTSCollection(X))
    np.testing.assert_array_equal(a.points, b.points)
    assert not a.non_euclidean
    # violates the triangle inequality, so no Euclidean embedding exists
    D = np.array([[0, 1, 5], [1, 0, 1], [5, 1, 0]], dtype=float)
    assert classical_mds(D).non_euclidean
    with pytest.raises(InvalidInputError):
        classical_mds(np.zeros((2, 2)))


# --- semantic tree ----------------------------------------------------------

def spanning_trees(K):
    """Every spanning tree of K nodes as an edge list (exhaustive)."""
    allpairs = list(itertools.combinations(range(K), 2))
    for edges in itertools.combinations(allpairs, K - 1):
        parent = list(range(K))

        def find(x):
            while parent[x] != x:
                x = parent[x]
            return x

        ok = True
        for a, b in edges:
            ra, rb = find(a), find(b)
            if ra == rb:
                ok = False
                break
            parent[ra] = rb
        if ok:
            yield edges


def test_tree_two_clusters():
    tree = semantic_tree(np.array([[[0.0]], [[3.0]]]), Partition(np.array([0, 0, 1]), 2))
    assert tree.edges == [(0, 1, 3.0)]
    assert tree.sizes == [2, 1]


def test_tree_worked_example():
    W = np.array([[0, 1, 3], [1, 0, 2], [3, 2, 0]], dtype=float)
    edges = prim_mst(W)
    assert {(a, b) for a, b, _ in edges} == {(0, 1), (1, 2)}
    assert sum(w for *_, w in edges) == 3.0
    assert min(sum(W[a, b] for a, b in t) for t in spanning_trees(3)) == 3.0


@pytest.mark.parametrize("K", [2, 3, 4, 5, 6])
def test_tree_minimal_exhaustive(K):
    rng = np.random.default_rng(K)
    for _ in range(5):
        C = rng.normal(size=(K, 2, 2))
        tree = semantic_tree(C, Partition(np.arange(K), K))
        W = pairwise_distances(C)
        best = min(sum(W[a, b] for a, b in t) for t in spanning_trees(K))
        assert tree.total_weight == pytest.approx(best, rel=1e-12)
        G = nx.Graph()
        G.add_edges_from((a, b) for a, b, _ in tree.edges)
        assert G.number_of_nodes() == K and nx.is_tree(G)


def test_tree_exports():
    C = np.random.default_rng(8).normal(size=(4, 2, 2))
    tree = semantic_tree(C, Partition(np.array([0, 1, 2, 3, 3]), 4))
    d = json.loads(json.dumps(tree.to_dict()))
    assert len(d["edges"]) == 3 and d["nodes"][3]["size"] == 2
    dot = tree.to_dot()
    assert dot.startswith("graph semantic_tree {") and dot.count(" -- ") == 3


def test_tree_needs_two_clusters():
    with pytest.raises(InvalidInputError):
        semantic_tree(np.zeros((1, 1, 1)), Partition(np.zeros(3, int), 1))


# --- interpolation and nearest ----------------------------------------------

def test_interpolate_endpoints_and_midpoint():
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    np.testing.assert_array_equal(interpolate(a, b, 1.0), a)
    np.testing.assert_array_equal(interpolate(a, b, 0.0), b)
    np.testing.assert_array_equal(interpolate(np.zeros((2, 2)), np.full((2, 2), 2.0), 0.5), np.ones((2, 2)))


def test_interpolate_collinear_and_bounded():
    rng = np.random.default_rng(10)
    for _ in range(50):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        w = float(rng.random())
        z = interpolate(a, b, w)
        assert mts_distance(z, a) + mts_distance(z, b) == pytest.approx(mts_distance(a, b), rel=1e-12)
        assert np.all(z >= np.minimum(a, b) - 1e-15) and np.all(z <= np.maximum(a, b) + 1e-15)


def test_interpolate_range_error():
    with pytest.raises(ValueError):
        interpolate(np.zeros(2), np.zeros(2), 1.5)
    with pytest.raises(ShapeError):
        interpolate(np.zeros(2), np.zeros(3), 0.5)


def test_nearest_sequence():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(40, 3, 2))
    coll = MTSCollection(X)
    assert nearest_sequence(coll, X[17]) == 17
    members = np.arange(10, 25)
    c = X[members].mean(0)
    assert nearest_sequence(coll, c, subset=members) == medoid(X[members], c, indices=members)
    for _ in range(100):
        q = rng.normal(size=(3, 2))
        scan = min(range(40), key=lambda i: (mts_distance(X[i], q), i))
        assert nearest_sequence(coll, q) == scan
    with pytest.raises(ShapeError):
        nearest_sequence(coll, np.zeros((2, 2)))


def test_nearest_sequence_tie_lowest_index():
    coll = MTSCollection(np.array([[[1.0]], [[-1.0]], [[1.0]]]))
    assert nearest_sequence(coll, np.zeros((1, 1))) == 0


# --- validity scores --------------------------------------------------------

def test_silhouette_blobs():
    X, y = blobs()
    assert silhouette(X, y) > 0.9
    rand = np.random.default_rng(1).permutation(y)
    assert silhouette(X, rand) < 0.05


def test_silhouette_matches_sklearn():
    rng = np.random.default_rng(12)
    for _ in range(10):
        X = rng.normal(size=(50, 3))
        y = rng.integers(4, size=50)
        y[:4] = np.arange(4)
        np.testing.assert_allclose(silhouette_samples(X, y, chunk=7),
                                   metrics.silhouette_samples(X, y), rtol=1e-10, atol=1e-12)


def test_silhouette_degenerate_cases():
    X = np.array([[0.0], [0.1], [0.2], [5.0]])
    s = silhouette_samples(X, [0, 0, 0, 1])
    assert s[3] == 0.0
    assert silhouette(np.ones((6, 2)), [0, 0, 0, 1, 1, 1]) == 0.0
    assert -1 <= silhouette(*blobs(3)) <= 1


def test_scores_precondition_errors():
    with pytest.raises(InvalidInputError):
        silhouette(np.zeros((4, 2)), [0, 0, 0, 0])
    with pytest.raises(InvalidInputError):
        calinski_harabasz(np.arange(3.0), [0, 1, 2])


def test_calinski_harabasz():
    X, y = blobs()
    ch = calinski_harabasz(X, y)
    assert ch > 100 * calinski_harabasz(X, np.random.default_rng(2).permutation(y))
    assert calinski_harabasz(2 * X, y) == pytest.approx(ch, rel=1e-12)
    assert ch == pytest.approx(metrics.calinski_harabasz_score(X, y), rel=1e-10)


def test_calinski_harabasz_zero_within():
    X = np.array([[0.0], [0.0], [1.0], [1.0]])
    with pytest.warns(UserWarning):
        assert calinski_harabasz(X, [0, 0, 1, 1]) == math.inf


def test_geographic_scores():
    g = decompose_grid(80, 80, 8)
    rows, cols = np.divmod(np.arange(g.m), g.cols)
    quad = (rows >= 5) * 2 + (cols >= 5)
    pepper = (rows + cols) % 2
    good = geographic_space_scores(g, Partition(quad, 4))
    bad = geographic_space_scores(g, Partition(pepper, 2))
    assert good.silhouette > 0 and bad.silhouette < 0
    assert good.space == "geographic-2D"
    d = good.to_dict()
    assert d["calinski_harabasz"] == good.calinski_harabasz and not d["calinski_harabasz_infinite"]


def test_embedded_scores():
    X, y = blobs()
    s = embedded_space_scores(MTSCollection(X[:, None, :]), Partition(y, 2))
    assert s.space == "embedded" and s.silhouette > 0.9


def test_ari_examples():
    a = np.array([0, 0, 0, 1, 1, 1])
    assert adjusted_rand_index(a, a) == 1.0
    assert adjusted_rand_index(a, 1 - a) == 1.0
    b = np.array([0, 0, 1, 1, 2, 2])
    # pairs: index 2, rows 6, cols 3, total 15 -> (2 - 1.2) / (4.5 - 1.2)
    assert adjusted_rand_index(a, b) == pytest.approx(8 / 33, rel=1e-12)
    with pytest.raises(ShapeError):
        adjusted_rand_index(a, b[:5])


def test_ari_matches_sklearn_and_centers_on_zero():
    rng = np.random.default_rng(13)
    vals = []
    for _ in range(200):
        a, b = rng.integers(4, size=60), rng.integers(3, size=60)
        ari = adjusted_rand_index(a, b)
        assert ari == pytest.approx(metrics.adjusted_rand_score(a, b), abs=1e-12)
        assert ari <= 1
        vals.append(ari)
    assert abs(np.mean(vals)) < 0.01
