"""Multivariate time series of tile embeddings and the distances between them."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import EmptyInputError, ShapeError


class DistanceMode(str, Enum):
    # sqrt(sum_t ||a_t - b_t||^2): plain Euclidean on the flattened series
    CONCAT_EUCLIDEAN = "concat_euclidean"
    # sum_t ||a_t - b_t||
    PER_STEP_SUM = "per_step_sum"


PROVENANCES = ("geographic", "clustering", "pixel-baseline", "centroids", "unspecified")


@dataclass(frozen=True)
class MTS:
    values: np.ndarray  # (T, d)
    grid_index: int = -1


@dataclass(frozen=True)
class MTSCollection:
    values: np.ndarray  # (m, T, d)
    provenance: str = "unspecified"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ShapeError(f"MTS collection must be (m, T, d), got {v.shape}")
        if v.shape[0] < 1:
            raise EmptyInputError("MTS collection is empty")
        if not np.all(np.isfinite(v)):
            raise ValueError("MTS values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def m(self):
        return self.values.shape[0]

    @property
    def T(self):
        return self.values.shape[1]

    @property
    def d(self):
        return self.values.shape[2]

    def __len__(self):
        return self.m

    def __getitem__(self, i):
        return MTS(self.values[i], int(i))

    def flat(self):
        return self.values.reshape(self.m, -1)

    def save(self, path, encoder_checkpoint_hash=None):
        """``<path>.bin`` holds (m, T, d) float32 LE; ``<path>.json`` the header."""
        path = Path(path)
        self.values.astype("<f4").tofile(path.with_suffix(".bin"))
        header = {"m": self.m, "T": self.T, "d": self.d, "provenance": self.provenance,
                  "encoder_checkpoint_hash": encoder_checkpoint_hash}
        path.with_suffix(".json").write_text(json.dumps(header, indent=2))
        return path.with_suffix(".bin")

    @classmethod
    def load(cls, path):
        path = Path(path)
        header = json.loads(path.with_suffix(".json").read_text())
        arr = np.fromfile(path.with_suffix(".bin"), dtype="<f4")
        shape = (header["m"], header["T"], header["d"])
        if arr.size != np.prod(shape):
            raise ShapeError(f"{path}: header says {shape}, file holds {arr.size} values")
        return cls(arr.reshape(shape).astype(np.float64), header.get("provenance", "unspecified"))

    def digest(self):
        return hashlib.sha256(self.values.astype("<f4").tobytes()).hexdigest()


def _as_array(x):
    return np.asarray(getattr(x, "values", x), dtype=np.float64)


def mts_distance(a, b, mode=DistanceMode.CONCAT_EUCLIDEAN):
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ShapeError(f"MTS shapes differ: {a.shape} vs {b.shape}")
    step = np.linalg.norm(a - b, axis=-1)
    if DistanceMode(mode) is DistanceMode.PER_STEP_SUM:
        return float(step.sum())
    return float(np.sqrt(np.sum(step ** 2)))


def pairwise_distances(A, B=None, mode=DistanceMode.CONCAT_EUCLIDEAN):
    """Distance matrix between two stacks of MTS, ``(n, T, d)`` x ``(k, T, d)``."""
    A = _as_array(A)
    B = A if B is None else _as_array(B)
    if A.shape[1:] != B.shape[1:]:
        raise ShapeError(f"MTS shapes differ: {A.shape[1:]} vs {B.shape[1:]}")
    mode = DistanceMode(mode)
    if mode is DistanceMode.CONCAT_EUCLIDEAN:
        Af, Bf = A.reshape(len(A), -1), B.reshape(len(B), -1)
        # exact differences rather than the ||a||^2 + ||b||^2 - 2ab expansion
        sq = np.empty((len(Af), len(Bf)))
        for j in range(len(Bf)):
            sq[:, j] = np.sum((Af - Bf[j]) ** 2, axis=1)
        return np.sqrt(sq)
    D = np.empty((len(A), len(B)))
    for j in range(len(B)):
        D[:, j] = np.linalg.norm(A - B[j], axis=-1).sum(axis=1)
    return D


def embed_sequences(params, seq, grid, provenance="geographic"):
    """Embed every tile sequence on ``grid``: item i, row t = f(x_i^t)."""
    from .encoder import embed_batch
    from .raster import grid_tiles

    cfg = params.config
    if grid.tile_size != cfg.tile_size or seq.channels != cfg.input_channels:
        raise ShapeError(
            f"encoder expects {cfg.input_channels}x{cfg.tile_size}^2 tiles, scene gives "
            f"{seq.channels}x{grid.tile_size}^2")
    tiles = grid_tiles(seq, grid)  # (m, T, C, s, s)
    m, T = tiles.shape[:2]
    z = embed_batch(params, tiles.reshape((m * T,) + tiles.shape[2:]))
    return MTSCollection(z.reshape(m, T, -1), provenance=provenance)
