import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tilemts.encoder import EncoderConfig, embed, init_encoder
from tilemts.errors import ShapeError
from tilemts.mts import (DistanceMode, MTSCollection, embed_sequences, mts_distance,
                         pairwise_distances)
from tilemts.raster import SceneSequence, decompose_grid, extract_tile

MODES = list(DistanceMode)
CFG = EncoderConfig(3, 8, ((4, 3, 2),), 5)


def random_scene(T=3, H=24, W=32, seed=0):
    return SceneSequence.from_array(np.random.default_rng(seed).random((T, 3, H, W)))


@pytest.mark.parametrize("mode", MODES)
def test_distance_zero_on_equal(mode):
    a = np.random.default_rng(0).normal(size=(4, 3))
    assert mts_distance(a, a.copy(), mode) == 0.0


@pytest.mark.parametrize("mode", MODES)
def test_distance_single_step_is_euclidean(mode):
    a, b = np.array([[1.0, 2.0, 3.0]]), np.array([[4.0, 6.0, 3.0]])
    assert mts_distance(a, b, mode) == 5.0


def test_distance_worked_example():
    a = np.zeros((2, 2))
    b = np.array([[3.0, 4.0], [0.0, 1.0]])
    assert mts_distance(a, b, DistanceMode.PER_STEP_SUM) == 6.0
    assert mts_distance(a, b, DistanceMode.CONCAT_EUCLIDEAN) == pytest.approx(math.sqrt(26), rel=1e-15)


def test_distance_default_is_concat():
    a, b = np.zeros((2, 2)), np.array([[3.0, 4.0], [0.0, 1.0]])
    assert mts_distance(a, b) == mts_distance(a, b, "concat_euclidean")


def test_distance_shape_error():
    with pytest.raises(ShapeError):
        mts_distance(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ShapeError):
        pairwise_distances(np.zeros((4, 2, 3)), np.zeros((4, 2, 2)))


# fixed 1e-6 resolution; squared differences of subnormals underflow to 0
series = arrays(np.float64, (3, 2), elements=st.integers(-10**9, 10**9).map(lambda v: v / 1e6))


@settings(max_examples=200)
@given(series, series, series, st.sampled_from(MODES))
def test_metric_axioms(a, b, c, mode):
    ab, ba = mts_distance(a, b, mode), mts_distance(b, a, mode)
    assert ab == ba and ab >= 0
    assert (ab == 0) == np.array_equal(a, b)
    tol = 1e-9 * (1 + ab)
    assert mts_distance(a, c, mode) <= ab + mts_distance(b, c, mode) + tol


@settings(max_examples=200)
@given(series, series)
def test_concat_bounded_by_per_step(a, b):
    concat = mts_distance(a, b, DistanceMode.CONCAT_EUCLIDEAN)
    assert concat <= mts_distance(a, b, DistanceMode.PER_STEP_SUM) * (1 + 1e-12)


@pytest.mark.parametrize("mode", MODES)
def test_pairwise_matches_scalar(mode):
    rng = np.random.default_rng(1)
    A, B = rng.normal(size=(6, 3, 4)), rng.normal(size=(4, 3, 4))
    D = pairwise_distances(A, B, mode)
    for i in range(6):
        for j in range(4):
            assert D[i, j] == pytest.approx(mts_distance(A[i], B[j], mode), rel=1e-12)
    S = pairwise_distances(A, mode=mode)
    assert np.all(np.diag(S) == 0)
    np.testing.assert_array_equal(S, S.T)


def test_collection_validation():
    with pytest.raises(ShapeError):
        MTSCollection(np.zeros((3, 4)))
    with pytest.raises(ValueError):
        MTSCollection(np.zeros((0, 2, 2)))
    with pytest.raises(ValueError):
        MTSCollection(np.full((1, 2, 2), np.nan))


def test_collection_save_load(tmp_path):
    Z = MTSCollection(np.random.default_rng(2).normal(size=(5, 3, 4)), "geographic")
    Z.save(tmp_path / "mts", encoder_checkpoint_hash="abc")
    header = json.loads((tmp_path / "mts.json").read_text())
    assert header == {"m": 5, "T": 3, "d": 4, "provenance": "geographic",
                      "encoder_checkpoint_hash": "abc"}
    raw = np.fromfile(tmp_path / "mts.bin", dtype="<f4")
    np.testing.assert_array_equal(raw, Z.values.astype(np.float32).ravel())
    again = MTSCollection.load(tmp_path / "mts")
    assert again.provenance == "geographic"
    np.testing.assert_array_equal(again.values, Z.values.astype(np.float32))
    assert again.digest() == Z.digest()


def test_embed_sequences_constant_scene():
    frame = np.random.default_rng(3).random((3, 24, 32))
    seq = SceneSequence.from_array(np.stack([frame] * 4))
    Z = embed_sequences(init_encoder(CFG, 0), seq, decompose_grid(32, 24, 8))
    assert (Z.m, Z.T, Z.d) == (12, 4, 5)
    for i in range(Z.m):
        assert np.all(Z.values[i] == Z.values[i, 0])


def test_embed_sequences_single_cell():
    seq = random_scene(H=8, W=8)
    Z = embed_sequences(init_encoder(CFG, 0), seq, decompose_grid(8, 8, 8))
    assert Z.m == 1


def test_embed_sequences_matches_single_embed_exactly():
    seq = random_scene(T=3, H=40, W=48)
    grid = decompose_grid(48, 40, 8)
    params = init_encoder(CFG, 1)
    Z = embed_sequences(params, seq, grid)
    for i in range(grid.m):
        for t in range(seq.T):
            np.testing.assert_array_equal(Z.values[i, t], embed(params, extract_tile(seq, grid, i, t)))


def test_embed_sequences_order_invariant():
    seq = random_scene(T=3, H=40, W=48)
    grid = decompose_grid(48, 40, 8)
    params = init_encoder(CFG, 1)
    Z = embed_sequences(params, seq, grid)
    flipped = SceneSequence.from_array(seq.stack[::-1].copy())
    np.testing.assert_array_equal(embed_sequences(params, flipped, grid).values, Z.values[:, ::-1])


def test_embed_sequences_shape_mismatch():
    seq = random_scene()
    with pytest.raises(ShapeError):
        embed_sequences(init_encoder(CFG, 0), seq, decompose_grid(32, 24, 12))
