"""Reading and writing scene directories.

A scene directory has a ``manifest.json``::

    {"images": [{"file": "t001.png", "timestamp": 1}, ...]}

Each entry is either an 8-bit RGB PNG or a raw little-endian float32
channel-major array (``.f32``) with a JSON sidecar of the same stem holding
``{width, height, channels, timestamp}``.
"""
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .raster import SceneImage, SceneSequence

MANIFEST = "manifest.json"


def _read_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def _read_raw(path):
    meta = json.loads(path.with_suffix(".json").read_text())
    shape = (int(meta["channels"]), int(meta["height"]), int(meta["width"]))
    data = np.fromfile(path, dtype="<f4")
    if data.size != np.prod(shape):
        raise ValueError(f"{path}: expected {np.prod(shape)} floats, found {data.size}")
    return np.clip(data.reshape(shape).astype(np.float64), 0.0, 1.0), int(meta["timestamp"])


def load_scene_dir(directory):
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    entries = sorted(manifest["images"], key=lambda e: e["timestamp"])
    images = []
    for e in entries:
        path = directory / e["file"]
        if path.suffix.lower() == ".png":
            values = _read_png(path)
        else:
            values, _ = _read_raw(path)
        images.append(SceneImage(values, int(e["timestamp"])))
    return SceneSequence(tuple(images))


def save_scene_dir(seq, directory, fmt="raw"):
    """Write ``seq`` as a scene directory; ``fmt`` is ``"raw"`` or ``"png"``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, im in enumerate(seq.images):
        stem = f"t{k:03d}"
        if fmt == "png":
            name = stem + ".png"
            rgb = np.round(im.values[:3].transpose(1, 2, 0) * 255).astype(np.uint8)
            Image.fromarray(rgb, "RGB").save(directory / name)
        elif fmt == "raw":
            name = stem + ".f32"
            im.values.astype("<f4").tofile(directory / name)
            (directory / (stem + ".json")).write_text(json.dumps({
                "width": im.width, "height": im.height,
                "channels": im.channels, "timestamp": im.timestamp}))
        else:
            raise ValueError(f"unknown scene format {fmt!r}")
        entries.append({"file": name, "timestamp": im.timestamp})
    (directory / MANIFEST).write_text(json.dumps({"images": entries}, indent=2))
    return directory
