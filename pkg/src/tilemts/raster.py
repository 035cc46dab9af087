"""Raster data model: scenes, tile grids, tile extraction and synthetic scenes.

Arrays are channel-major, ``(channel, row, col)``, with reflectance in
``[0, 1]``.  Timestamps are indexed from 0 inside the package; the
``timestamp`` attribute of a :class:`SceneImage` keeps whatever label the
source data carried.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import GeometryError, InvalidSpecError

__all__ = [
    "SceneImage",
    "SceneSequence",
    "TileGrid",
    "Tile",
    "Zone",
    "SyntheticSceneSpec",
    "GroundTruthLabels",
    "decompose_grid",
    "extract_tile",
    "tile_sequence",
    "generate_synthetic_scene",
    "mean_rgb_features",
    "quadrant_layout",
]


@dataclass(frozen=True)
class SceneImage:
    values: np.ndarray
    timestamp: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise GeometryError(f"image must be (channel, row, col), got shape {v.shape}")
        if not np.all(np.isfinite(v)) or v.min(initial=0.0) < 0.0 or v.max(initial=0.0) > 1.0:
            raise ValueError("image values must be finite and lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def channels(self):
        return self.values.shape[0]

    @property
    def height(self):
        return self.values.shape[1]

    @property
    def width(self):
        return self.values.shape[2]


@dataclass(frozen=True)
class SceneSequence:
    """Co-registered images of one region, ordered by timestamp."""

    images: tuple

    def __post_init__(self):
        images = tuple(self.images)
        if not images:
            raise GeometryError("a scene sequence needs at least one image")
        shape = images[0].values.shape
        for im in images[1:]:
            if im.values.shape != shape:
                raise GeometryError("all images in a sequence must share (channels, height, width)")
        stamps = [im.timestamp for im in images]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise GeometryError("timestamps must be strictly increasing")
        object.__setattr__(self, "images", images)

    @classmethod
    def from_array(cls, stack, timestamps=None):
        stack = np.asarray(stack, dtype=np.float64)
        if timestamps is None:
            timestamps = range(1, stack.shape[0] + 1)
        return cls(tuple(SceneImage(v, int(t)) for v, t in zip(stack, timestamps)))

    @cached_property
    def stack(self):
        """All images as one read-only ``(T, C, H, W)`` array."""
        s = np.stack([im.values for im in self.images])
        s.setflags(write=False)
        return s

    @property
    def T(self):
        return len(self.images)

    @property
    def channels(self):
        return self.images[0].channels

    @property
    def height(self):
        return self.images[0].height

    @property
    def width(self):
        return self.images[0].width


@dataclass(frozen=True)
class TileGrid:
    tile_size: int
    rows: int
    cols: int
    origin_x: int = 0
    origin_y: int = 0

    @property
    def m(self):
        return self.rows * self.cols

    def cell(self, i):
        """(row, col) of grid index ``i`` (row-major)."""
        if not 0 <= i < self.m:
            raise IndexError(f"grid index {i} out of range [0, {self.m})")
        return divmod(int(i), self.cols)

    def top_left(self, i):
        """Pixel (x, y) of the upper-left corner of cell ``i``."""
        r, c = self.cell(i)
        return self.origin_x + c * self.tile_size, self.origin_y + r * self.tile_size

    def centers(self):
        """Tile-center pixel coordinates ``(m, 2)`` as (x, y)."""
        idx = np.arange(self.m)
        r, c = np.divmod(idx, self.cols)
        half = self.tile_size / 2.0
        x = self.origin_x + c * self.tile_size + half
        y = self.origin_y + r * self.tile_size + half
        return np.column_stack([x, y])


@dataclass(frozen=True)
class Tile:
    values: np.ndarray
    grid_index: int
    timestamp_index: int


def decompose_grid(width, height, tile_size):
    """Cut a ``width x height`` image into non-overlapping square cells.

    Border pixels that do not fill a whole tile are left out.
    """
    if tile_size < 1:
        raise GeometryError(f"tile_size must be >= 1, got {tile_size}")
    if width < tile_size or height < tile_size:
        raise GeometryError(
            f"image {width}x{height} is smaller than tile size {tile_size}")
    return TileGrid(int(tile_size), int(height // tile_size), int(width // tile_size))


def _check_fits(seq, grid):
    need_w = grid.origin_x + grid.cols * grid.tile_size
    need_h = grid.origin_y + grid.rows * grid.tile_size
    if need_w > seq.width or need_h > seq.height:
        raise GeometryError("grid does not fit inside the scene")


def extract_tile(seq, grid, i, t):
    if not 0 <= t < seq.T:
        raise IndexError(f"timestamp index {t} out of range [0, {seq.T})")
    _check_fits(seq, grid)
    x, y = grid.top_left(i)
    s = grid.tile_size
    return Tile(seq.stack[t, :, y:y + s, x:x + s], int(i), int(t))


def tile_sequence(seq, grid, i):
    return [extract_tile(seq, grid, i, t) for t in range(seq.T)]


def grid_tiles(seq, grid):
    """Every tile of every timestamp as a ``(m, T, C, s, s)`` view-free copy."""
    _check_fits(seq, grid)
    s = grid.tile_size
    crop = seq.stack[:, :, grid.origin_y:grid.origin_y + grid.rows * s,
                     grid.origin_x:grid.origin_x + grid.cols * s]
    T, C = crop.shape[:2]
    tiles = crop.reshape(T, C, grid.rows, s, grid.cols, s)
    # -> (rows, cols, T, C, s, s)
    tiles = tiles.transpose(2, 4, 0, 1, 3, 5)
    return np.ascontiguousarray(tiles.reshape(grid.m, T, C, s, s))


# ---------------------------------------------------------------------------
# synthetic scenes

@dataclass(frozen=True)
class Zone:
    """One planted land type.

    The zone color at timestamp ``t`` is
    ``color + seasonal_amplitude * cos(2 pi t / season_period + phase)``.
    ``texture_amplitude`` adds zero-mean vertical stripes of width
    ``texture_period / 2`` so that zones can differ in texture while sharing
    their mean color.
    """

    color: tuple
    seasonal_amplitude: tuple = (0.0, 0.0, 0.0)
    phase: float = 0.0
    noise: float = 0.0
    texture_amplitude: float = 0.0
    texture_period: int = 4

    def color_at(self, t, season_period):
        base = np.asarray(self.color, dtype=np.float64)
        amp = np.broadcast_to(np.asarray(self.seasonal_amplitude, dtype=np.float64), base.shape)
        return np.clip(base + amp * np.cos(2 * np.pi * t / season_period + self.phase), 0.0, 1.0)


@dataclass(frozen=True)
class SyntheticSceneSpec:
    zones: tuple
    layout: np.ndarray  # (rows, cols) zone label per grid cell
    T: int
    tile_size: int
    season_period: int = 4
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "zones", tuple(self.zones))
        layout = np.asarray(self.layout, dtype=np.int64)
        object.__setattr__(self, "layout", layout)
        if not self.zones:
            raise InvalidSpecError("at least one zone is required")
        if layout.ndim != 2 or layout.size == 0:
            raise InvalidSpecError("layout must be a non-empty (rows, cols) array")
        if layout.min() < 0 or layout.max() >= len(self.zones):
            raise InvalidSpecError("layout references an undefined zone")
        if self.T < 1 or self.tile_size < 1:
            raise InvalidSpecError("T and tile_size must be positive")
        if any(z.noise < 0 for z in self.zones):
            raise InvalidSpecError("noise amplitude must be >= 0")
        if self.image_width < layout.shape[1] * self.tile_size or \
                self.image_height < layout.shape[0] * self.tile_size:
            raise InvalidSpecError("image dims too small for layout")

    @property
    def image_width(self):
        return self.width if self.width is not None else self.layout.shape[1] * self.tile_size

    @property
    def image_height(self):
        return self.height if self.height is not None else self.layout.shape[0] * self.tile_size

    def to_json(self):
        return json.dumps({
            "zones": [
                {"color": list(z.color), "seasonal_amplitude": list(np.atleast_1d(z.seasonal_amplitude)),
                 "phase": z.phase, "noise": z.noise,
                 "texture_amplitude": z.texture_amplitude, "texture_period": z.texture_period}
                for z in self.zones],
            "layout": self.layout.tolist(),
            "T": self.T,
            "tile_size": self.tile_size,
            "season_period": self.season_period,
            "width": self.width,
            "height": self.height,
        }, indent=2)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        zones = []
        for z in d["zones"]:
            zones.append(Zone(
                color=tuple(z["color"]),
                seasonal_amplitude=tuple(z.get("seasonal_amplitude", (0.0, 0.0, 0.0))),
                phase=float(z.get("phase", 0.0)),
                noise=float(z.get("noise", 0.0)),
                texture_amplitude=float(z.get("texture_amplitude", 0.0)),
                texture_period=int(z.get("texture_period", 4))))
        return cls(zones=tuple(zones), layout=np.asarray(d["layout"]), T=int(d["T"]),
                   tile_size=int(d["tile_size"]), season_period=int(d.get("season_period", 4)),
                   width=d.get("width"), height=d.get("height"))

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class GroundTruthLabels:
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


def quadrant_layout(rows, cols, n_zones=4):
    """Split a grid into 2x2 blocks labelled 0..3 (row-major quadrants)."""
    r = (np.arange(rows) >= rows / 2).astype(int)
    c = (np.arange(cols) >= cols / 2).astype(int)
    layout = 2 * r[:, None] + c[None, :]
    return layout % n_zones


def generate_synthetic_scene(spec, seed):
    """Render a planted scene; returns ``(SceneSequence, GroundTruthLabels)``.

    Deterministic in ``(spec, seed)``.
    """
    if not isinstance(spec, SyntheticSceneSpec):
        raise InvalidSpecError("expected a SyntheticSceneSpec")
    rng = np.random.default_rng(seed)
    H, W, s = spec.image_height, spec.image_width, spec.tile_size
    rows, cols = spec.layout.shape
    # zone label per pixel; border pixels take the nearest cell's zone
    ri = np.minimum(np.arange(H) // s, rows - 1)
    ci = np.minimum(np.arange(W) // s, cols - 1)
    pix_zone = spec.layout[ri[:, None], ci[None, :]]

    noise_amp = np.array([z.noise for z in spec.zones])[pix_zone]
    texture = np.zeros((H, W))
    xs = np.arange(W)
    for k, z in enumerate(spec.zones):
        if z.texture_amplitude:
            half = max(z.texture_period // 2, 1)
            stripe = np.where((xs // half) % 2 == 0, 1.0, -1.0) * z.texture_amplitude
            texture = np.where(pix_zone == k, stripe[None, :], texture)

    images = []
    for t in range(spec.T):
        colors = np.stack([z.color_at(t, spec.season_period) for z in spec.zones])  # (Z, 3)
        C = colors.shape[1]
        base = colors[pix_zone].transpose(2, 0, 1)  # (C, H, W)
        noise = rng.standard_normal((C, H, W)) * noise_amp[None]
        images.append(SceneImage(np.clip(base + texture[None] + noise, 0.0, 1.0), t + 1))
    labels = spec.layout.reshape(-1).copy()
    return SceneSequence(tuple(images)), GroundTruthLabels(labels)


def mean_rgb_features(seq, tile_size):
    """Pixel baseline: per-tile channel means for every timestamp.

    Returns an :class:`~tilemts.mts.MTSCollection` with ``d`` equal to the
    channel count.
    """
    from .mts import MTSCollection

    grid = decompose_grid(seq.width, seq.height, tile_size)
    tiles = grid_tiles(seq, grid)  # (m, T, C, s, s)
    return MTSCollection(tiles.mean(axis=(3, 4)), provenance="pixel-baseline")


def four_zone_spec(rows=20, cols=20, T=8, tile_size=16, noise=0.05, texture=0.15):
    """Planted quadrant scene used by the demos and the acceptance suite.

    Zones 0/1 share one seasonal color cycle and zones 2/3 another (in
    antiphase); 1 and 3 add striped texture, so a per-tile color mean
    cannot tell them from their plain twins.
    """
    green = dict(color=(0.35, 0.5, 0.25), seasonal_amplitude=(0.1, 0.1, 0.05), phase=0.0)
    ochre = dict(color=(0.6, 0.5, 0.4), seasonal_amplitude=(0.1, 0.1, 0.1), phase=float(np.pi))
    zones = (
        Zone(**green, noise=noise),
        Zone(**green, noise=noise, texture_amplitude=texture),
        Zone(**ochre, noise=noise),
        Zone(**ochre, noise=noise, texture_amplitude=texture),
    )
    return SyntheticSceneSpec(zones, quadrant_layout(rows, cols), T, tile_size)
