"""Tile encoder: a small convolutional network trained with a triplet objective.

The network is ``[conv -> relu] * n -> global average pool -> linear``.
Forward and backward passes are written out by hand in numpy (im2col
convolutions), in float64, so the gradient can be checked against finite
differences.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (DivergenceError, EmptyInputError, InvalidConfigError,
                     ShapeError)


@dataclass(frozen=True)
class EncoderConfig:
    input_channels: int = 3
    tile_size: int = 16
    conv_blocks: tuple = ((8, 3, 2), (16, 3, 2), (32, 3, 2))
    embedding_dim: int = 16

    def __post_init__(self):
        object.__setattr__(self, "conv_blocks", tuple(tuple(int(v) for v in b) for b in self.conv_blocks))
        if not self.conv_blocks:
            raise InvalidConfigError("at least one conv block is required")
        if self.embedding_dim < 2:
            raise InvalidConfigError("embedding_dim must be >= 2")
        if self.input_channels < 1 or self.tile_size < 1:
            raise InvalidConfigError("input_channels and tile_size must be positive")
        for f, k, s in self.conv_blocks:
            if f < 1 or k < 1 or s < 1:
                raise InvalidConfigError(f"bad conv block {(f, k, s)}")
        if self.receptive_field > self.tile_size:
            raise InvalidConfigError(
                f"receptive field {self.receptive_field} exceeds tile size {self.tile_size}")

    @property
    def receptive_field(self):
        rf, jump = 1, 1
        for _, k, s in self.conv_blocks:
            rf += (k - 1) * jump
            jump *= s
        return rf

    @classmethod
    def full_scale(cls, input_channels=3):
        """100-pixel tiles and 512-dim embeddings."""
        return cls(input_channels, 100, ((16, 3, 2), (32, 3, 2), (64, 3, 2), (128, 3, 2)), 512)

    def to_dict(self):
        return {"input_channels": self.input_channels, "tile_size": self.tile_size,
                "conv_blocks": [list(b) for b in self.conv_blocks],
                "embedding_dim": self.embedding_dim}

    @classmethod
    def from_dict(cls, d):
        return cls(d["input_channels"], d["tile_size"], tuple(tuple(b) for b in d["conv_blocks"]),
                   d["embedding_dim"])


@dataclass
class EncoderParams:
    """Weights of the encoder, as ``[W_conv1, b_conv1, ..., W_lin, b_lin]``."""

    config: EncoderConfig
    tensors: list

    def flat(self):
        return np.concatenate([t.ravel() for t in self.tensors])

    @property
    def shapes(self):
        return [t.shape for t in self.tensors]

    @classmethod
    def from_flat(cls, config, vec):
        shapes = param_shapes(config)
        sizes = [int(np.prod(s)) for s in shapes]
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != sum(sizes):
            raise ShapeError(f"expected {sum(sizes)} parameters, got {vec.size}")
        out, pos = [], 0
        for shape, n in zip(shapes, sizes):
            out.append(vec[pos:pos + n].reshape(shape).copy())
            pos += n
        return cls(config, out)

    def copy(self):
        return EncoderParams(self.config, [t.copy() for t in self.tensors])


def param_shapes(config):
    shapes = []
    c = config.input_channels
    for f, k, _ in config.conv_blocks:
        shapes += [(f, c, k, k), (f,)]
        c = f
    shapes += [(config.embedding_dim, c), (config.embedding_dim,)]
    return shapes


def init_encoder(config, seed):
    """Fan-in scaled normal weights, zero biases."""
    if not isinstance(config, EncoderConfig):
        raise InvalidConfigError("expected an EncoderConfig")
    rng = np.random.default_rng(seed)
    tensors = []
    for shape in param_shapes(config):
        if len(shape) == 1:
            tensors.append(np.zeros(shape))
            continue
        fan_in = int(np.prod(shape[1:]))
        gain = 2.0 if len(shape) == 4 else 1.0
        tensors.append(rng.standard_normal(shape) * np.sqrt(gain / fan_in))
    return EncoderParams(config, tensors)


# ---------------------------------------------------------------------------
# layers

def _conv_forward(x, W, b, stride):
    F, C, k, _ = W.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    N, _, Ho, Wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * k * k)
    out = cols @ W.reshape(F, -1).T + b
    return out.reshape(N, Ho, Wo, F).transpose(0, 3, 1, 2), (cols, xp.shape, Ho, Wo)


def _conv_backward(dout, W, stride, cache):
    cols, xp_shape, Ho, Wo = cache
    F, C, k, _ = W.shape
    pad = k // 2
    N = dout.shape[0]
    d = dout.transpose(0, 2, 3, 1).reshape(-1, F)
    dW = (d.T @ cols).reshape(W.shape)
    db = d.sum(axis=0)
    dcols = (d @ W.reshape(F, -1)).reshape(N, Ho, Wo, C, k, k)
    dxp = np.zeros(xp_shape)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    H, Wd = xp_shape[2] - 2 * pad, xp_shape[3] - 2 * pad
    return dxp[:, :, pad:pad + H, pad:pad + Wd], dW, db


def forward(params, x):
    """Embed a batch ``(N, C, s, s)``; returns ``(z, cache)``.

    ``cache["preacts"]`` holds the pre-rectifier activations of every conv
    block, which backprop and kink detection both need.
    """
    cfg = params.config
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != (cfg.input_channels, cfg.tile_size, cfg.tile_size):
        raise ShapeError(
            f"expected tiles of shape (N, {cfg.input_channels}, {cfg.tile_size}, {cfg.tile_size}),"
            f" got {x.shape}")
    preacts, conv_caches = [], []
    h = x
    nblocks = len(cfg.conv_blocks)
    for li, (_, _, stride) in enumerate(cfg.conv_blocks):
        W, b = params.tensors[2 * li], params.tensors[2 * li + 1]
        a, cc = _conv_forward(h, W, b, stride)
        preacts.append(a)
        conv_caches.append(cc)
        h = np.maximum(a, 0.0)
    pooled = h.mean(axis=(2, 3))
    Wl, bl = params.tensors[2 * nblocks], params.tensors[2 * nblocks + 1]
    z = pooled @ Wl.T + bl
    return z, {"preacts": preacts, "convs": conv_caches, "pooled": pooled, "last_hw": h.shape[2:]}


def backward(params, dz, cache):
    cfg = params.config
    nblocks = len(cfg.conv_blocks)
    Wl = params.tensors[2 * nblocks]
    grads = [None] * len(params.tensors)
    grads[2 * nblocks] = dz.T @ cache["pooled"]
    grads[2 * nblocks + 1] = dz.sum(axis=0)
    dpooled = dz @ Wl
    Hh, Ww = cache["last_hw"]
    dh = np.broadcast_to(dpooled[:, :, None, None] / (Hh * Ww),
                         dpooled.shape + (Hh, Ww))
    for li in range(nblocks - 1, -1, -1):
        stride = cfg.conv_blocks[li][2]
        da = dh * (cache["preacts"][li] > 0)
        dh, dW, db = _conv_backward(da, params.tensors[2 * li], stride, cache["convs"][li])
        grads[2 * li], grads[2 * li + 1] = dW, db
    return grads


# fixed, zero-padded chunk size: keeps every tile's embedding bit-identical
# regardless of the batch it is embedded in
EMBED_CHUNK = 256


def embed_batch(params, tiles):
    tiles = np.asarray(tiles, dtype=np.float64)
    if tiles.ndim != 4:
        raise ShapeError(f"expected a (N, C, s, s) batch, got shape {tiles.shape}")
    out = []
    for i in range(0, len(tiles), EMBED_CHUNK):
        chunk = tiles[i:i + EMBED_CHUNK]
        n = len(chunk)
        if n < EMBED_CHUNK:
            chunk = np.concatenate([chunk, np.zeros((EMBED_CHUNK - n,) + chunk.shape[1:])])
        out.append(forward(params, chunk)[0][:n])
    if not out:
        return np.zeros((0, params.config.embedding_dim))
    return np.concatenate(out)


def embed(params, tile):
    values = getattr(tile, "values", tile)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3:
        raise ShapeError(f"expected a (C, s, s) tile, got shape {values.shape}")
    return embed_batch(params, values[None])[0]


# ---------------------------------------------------------------------------
# loss

def triplet_loss(z_a, z_b, z_c, delta):
    z_a, z_b, z_c = (np.asarray(v, dtype=np.float64) for v in (z_a, z_b, z_c))
    if not (z_a.shape == z_b.shape == z_c.shape):
        raise ShapeError("triplet embeddings must share one dimension")
    h = np.linalg.norm(z_a - z_b, axis=-1) - np.linalg.norm(z_a - z_c, axis=-1) + delta
    return np.maximum(h, 0.0)


def _safe_unit(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(n > 0, v / n, 0.0)
    return u, n[..., 0]


def _split_batch(batch):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 5 or batch.shape[1] != 3:
        raise ShapeError(f"triplet batch must be (B, 3, C, s, s), got {batch.shape}")
    if len(batch) == 0:
        raise EmptyInputError("empty triplet batch")
    return batch


def objective_and_gradient(params, batch, delta, lam, need_grad=True):
    """Summed triplet objective over ``batch`` and its exact gradient.

    ``batch`` has shape ``(B, 3, C, s, s)`` holding anchor, neighbor, distant.
    The hinge and every norm use subgradient 0 at their kinks.
    """
    batch = _split_batch(batch)
    B = len(batch)
    x = batch.reshape((3 * B,) + batch.shape[2:])
    z, cache = forward(params, x)
    z = z.reshape(B, 3, -1)
    za, zb, zc = z[:, 0], z[:, 1], z[:, 2]
    u_ab, d_ab = _safe_unit(za - zb)
    u_ac, d_ac = _safe_unit(za - zc)
    h = d_ab - d_ac + delta
    u_norm, norms = _safe_unit(z)
    value = float(np.maximum(h, 0.0).sum() + lam * norms.sum())
    if not need_grad:
        return value, None
    active = (h > 0).astype(np.float64)[:, None]
    dz = lam * u_norm
    dz[:, 0] += active * (u_ab - u_ac)
    dz[:, 1] -= active * u_ab
    dz[:, 2] += active * u_ac
    grads = backward(params, dz.reshape(3 * B, -1), cache)
    return value, grads


def objective(params, batch, delta, lam):
    return objective_and_gradient(params, batch, delta, lam, need_grad=False)[0]


def gradient(params, batch, delta, lam):
    return objective_and_gradient(params, batch, delta, lam)[1]


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainConfig:
    margin: float = 50.0
    reg: float = 0.01
    epochs: int = 50
    batch_size: int = 50
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.margin < 0 or self.reg < 0:
            raise InvalidConfigError("margin and reg must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise InvalidConfigError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class LossReport:
    epoch_means: list = field(default_factory=list)

    @property
    def final(self):
        return self.epoch_means[-1] if self.epoch_means else None

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "mean_objective"])
            for i, v in enumerate(self.epoch_means):
                w.writerow([i, repr(float(v))])


class Adam:
    def __init__(self, shapes, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, tensors, grads):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(tensors, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(params, triplet_tiles, config, log=None):
    """Minimise the triplet objective with shuffled mini-batches and Adam.

    ``triplet_tiles`` is a ``(n, 3, C, s, s)`` array.  Returns a trained copy
    of ``params`` and the per-epoch mean objective per triplet (measured on
    each batch before its update).
    """
    data = _split_batch(triplet_tiles)
    if len(data) < config.batch_size:
        raise EmptyInputError(
            f"need at least batch_size={config.batch_size} triplets, got {len(data)}")
    params = params.copy()
    opt = Adam(params.shapes, config.learning_rate, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng(config.seed)
    report = LossReport()
    n = len(data)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            value, grads = objective_and_gradient(params, data[idx], config.margin, config.reg)
            if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads):
                raise DivergenceError(epoch, value)
            total += value
            opt.step(params.tensors, grads)
        report.epoch_means.append(total / n)
        if log is not None:
            log(epoch, total / n)
    return params, report


def resume_train(params_geo, triplet_tiles, config, log=None):
    """Continue training from existing weights (fresh optimizer state)."""
    return train(params_geo, triplet_tiles, config, log=log)


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, params, seed=None, epoch=None):
    """Write ``<path>.bin`` (float32 LE flat vector) and ``<path>.json`` header."""
    path = Path(path)
    vec = params.flat().astype("<f4")
    bin_path = path.with_suffix(".bin")
    vec.tofile(bin_path)
    header = {"config": params.config.to_dict(), "seed": seed, "epoch": epoch,
              "n_params": int(vec.size), "dtype": "<f4"}
    path.with_suffix(".json").write_text(json.dumps(header, indent=2))
    return bin_path


def load_checkpoint(path):
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    config = EncoderConfig.from_dict(header["config"])
    vec = np.fromfile(path.with_suffix(".bin"), dtype="<f4").astype(np.float64)
    return EncoderParams.from_flat(config, vec), header


def params_hash(params):
    return hashlib.sha256(params.flat().astype("<f4").tobytes()).hexdigest()
