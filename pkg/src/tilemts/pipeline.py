"""End-to-end two-stage run: geographic embedding, clustering, refinement, analysis.

Every stage reads its inputs from the output directory and writes its own
artifacts there, so any stage can be rerun in isolation and give the same
bytes as a fresh full run.  Files are written to a scratch directory first
and moved into place with ``os.replace``.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (adjusted_rand_index, centroid_colors, embedded_space_scores,
                       geographic_space_scores, interpolate, mds_project,
                       nearest_sequence, pca_fit, render_cluster_map, save_png,
                       semantic_tree)
from .encoder import (EncoderConfig, LossReport, TrainConfig, init_encoder, load_checkpoint,
                      resume_train, save_checkpoint, train)
from .errors import InvalidConfigError, StageError, TileMTSError
from .kmeans import KMeansConfig, KMeansResult, lloyd, medoid
from .mts import DistanceMode, MTSCollection, embed_sequences
from .raster import (SceneSequence, SyntheticSceneSpec, decompose_grid, four_zone_spec,
                     generate_synthetic_scene, grid_tiles, mean_rgb_features)
from .scene_io import load_scene_dir, save_scene_dir
from .triplets import (ClusterSamplerConfig, GeoSamplerConfig, sample_cluster_triplets,
                       sample_geo_triplets, save_triplets_csv,
                       triplet_tiles)

log = logging.getLogger(__name__)

STAGE_IDS = {"synth": 0, "geo-sample": 1, "geo-init": 2, "geo-train": 3, "geo-cluster": 4,
             "refine-sample": 5, "refine-train": 6, "refine-cluster": 7, "baseline": 8}
INTERPOLATION_WEIGHTS = (0.25, 0.5, 0.75)


def stage_seed(master, stage):
    """Counter-based per-stage seed derived from the master seed."""
    ss = np.random.SeedSequence(int(master), spawn_key=(STAGE_IDS[stage],))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class PipelineConfig:
    out_dir: str = "run"
    seed: int = 0
    scene_dir: str | None = None
    synthetic: SyntheticSceneSpec | None = None
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    geo_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=50))
    refine_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=25))
    N: int = 2000
    r: float | None = None  # defaults to the tile size
    per_timestamp_quota: bool = False
    M: int = 1000
    ks: tuple = (3, 4, 5)
    refine_k: int = 5
    restarts: int = 10
    max_iter: int = 300
    rel_tol: float = 1e-6
    mode: DistanceMode = DistanceMode.CONCAT_EUCLIDEAN
    warm_start: bool = False

    def __post_init__(self):
        self.mode = DistanceMode(self.mode)
        self.ks = tuple(int(k) for k in self.ks)
        if self.refine_k < 2:
            raise InvalidConfigError("refinement needs refine_k >= 2")
        if self.refine_k not in self.ks:
            self.ks = tuple(sorted(set(self.ks) | {self.refine_k}))

    @property
    def out(self):
        return Path(self.out_dir)

    @property
    def radius(self):
        return self.r if self.r is not None else self.encoder.tile_size

    def kmeans_config(self, K, stage):
        return KMeansConfig(K=K, restarts=self.restarts, max_iter=self.max_iter,
                            rel_tol=self.rel_tol, mode=self.mode,
                            seed=stage_seed(self.seed, stage) + K)

    def to_dict(self):
        return {
            "out_dir": str(self.out_dir), "seed": self.seed, "scene_dir": self.scene_dir,
            "synthetic": json.loads(self.synthetic.to_json()) if self.synthetic else None,
            "encoder": self.encoder.to_dict(),
            "geo_train": _train_dict(self.geo_train), "refine_train": _train_dict(self.refine_train),
            "N": self.N, "r": self.r, "per_timestamp_quota": self.per_timestamp_quota, "M": self.M,
            "ks": list(self.ks), "refine_k": self.refine_k, "restarts": self.restarts,
            "max_iter": self.max_iter, "rel_tol": self.rel_tol, "mode": self.mode.value,
            "warm_start": self.warm_start,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("synthetic") is not None:
            d["synthetic"] = SyntheticSceneSpec.from_json(json.dumps(d["synthetic"]))
        if "encoder" in d:
            d["encoder"] = EncoderConfig.from_dict(d["encoder"])
        for key in ("geo_train", "refine_train"):
            if key in d:
                d[key] = TrainConfig(**d[key])
        if "ks" in d:
            d["ks"] = tuple(d["ks"])
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _train_dict(tc):
    return {k: getattr(tc, k) for k in tc.__dataclass_fields__}


def desk_config(out_dir="run", seed=0, **overrides):
    """Synthetic four-zone scene, 16-pixel tiles, 2000/1000 triplets.

    Runs in well under a minute on one CPU core.
    """
    base = PipelineConfig(out_dir=str(out_dir), seed=seed, synthetic=four_zone_spec(),
                          ks=(3, 4, 5), refine_k=4)
    return replace(base, **overrides)


# ---------------------------------------------------------------------------
# artifact bookkeeping

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@contextmanager
def _stage_dir(cfg, stage, subdir):
    """Scratch directory whose files are moved into ``out/subdir`` on success."""
    target = cfg.out / subdir
    target.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{stage}-", dir=cfg.out))
    t0 = time.perf_counter()
    try:
        yield tmp
    except TileMTSError as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(stage, str(exc)) from exc
    else:
        files = {}
        for p in sorted(tmp.rglob("*")):
            if p.is_file():
                rel = p.relative_to(tmp)
                dest = target / rel
                dest.parent.mkdir(parents=True, exist_ok=True)
                os.replace(p, dest)
                files[str(Path(subdir) / rel)] = sha256_file(dest)
        _update_manifest(cfg, stage, files, time.perf_counter() - t0)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _update_manifest(cfg, stage, files, wall):
    path = cfg.out / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    manifest["library_version"] = __version__
    manifest["config"] = cfg.to_dict()
    stages = manifest.setdefault("stages", {})
    stages[stage] = {"files": files, "wall_time_s": round(wall, 3)}
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    os.replace(tmp, path)


def artifact_hashes(out_dir):
    """``{relative path: sha256}`` for every file recorded in the manifest."""
    manifest = json.loads((Path(out_dir) / "manifest.json").read_text())
    out = {}
    for st in manifest["stages"].values():
        out.update(st["files"])
    return out


def _require(path, stage):
    path = Path(path)
    if not path.exists():
        raise StageError(stage, f"missing artifact {path}")
    return path


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# scene

def load_scene(cfg):
    """``(SceneSequence, planted labels or None)`` for the configured source."""
    if cfg.scene_dir is not None:
        seq = load_scene_dir(cfg.scene_dir)
        labels_path = Path(cfg.scene_dir) / "labels.csv"
        labels = np.loadtxt(labels_path, delimiter=",", skiprows=1, dtype=int)[:, 1] \
            if labels_path.exists() else None
        return seq, labels
    if cfg.synthetic is None:
        raise StageError("scene", "configure either scene_dir or a synthetic spec")
    seq, gt = generate_synthetic_scene(cfg.synthetic, stage_seed(cfg.seed, "synth"))
    # quantize as the scene files do, so in-memory and on-disk runs agree
    seq = SceneSequence.from_array(seq.stack.astype(np.float32),
                                   [im.timestamp for im in seq.images])
    return seq, gt.labels


def emit_synthetic(cfg, fmt="raw"):
    """Write the synthetic scene (and its planted labels) to ``out/scene``."""
    seq, labels = load_scene(replace(cfg, scene_dir=None))
    with _stage_dir(cfg, "synth", "scene") as tmp:
        save_scene_dir(seq, tmp, fmt=fmt)
        if labels is not None:
            with open(tmp / "labels.csv", "w") as fh:
                fh.write("grid_index,zone\n")
                for i, z in enumerate(labels):
                    fh.write(f"{i},{int(z)}\n")
        if cfg.synthetic is not None:
            (tmp / "spec.json").write_text(cfg.synthetic.to_json())
    return cfg.out / "scene"


def _grid(cfg, seq):
    return decompose_grid(seq.width, seq.height, cfg.encoder.tile_size)


# ---------------------------------------------------------------------------
# stage 1: geographic embedding

def _scene(cfg, scene):
    return scene if scene is not None else load_scene(cfg)


def train_geo(cfg, scene=None):
    """Sample geographic triplets and train f^g; persists ``geo/encoder``."""
    stage = "train-geo"
    seq, _ = _scene(cfg, scene)
    with _stage_dir(cfg, stage, "geo") as tmp:
        sampler = GeoSamplerConfig(N=cfg.N, r=cfg.radius, tile_size=cfg.encoder.tile_size,
                                   seed=stage_seed(cfg.seed, "geo-sample"),
                                   per_timestamp_quota=cfg.per_timestamp_quota)
        triplets = sample_geo_triplets(seq, sampler)
        save_triplets_csv(tmp / "triplets.csv", triplets)
        params = init_encoder(cfg.encoder, stage_seed(cfg.seed, "geo-init"))
        tc = replace(cfg.geo_train, seed=stage_seed(cfg.seed, "geo-train"))
        params, report = train(params, triplet_tiles(seq, triplets, cfg.encoder.tile_size), tc,
                               log=lambda e, v: log.info("geo epoch %d: %.6g", e, v))
        save_checkpoint(tmp / "encoder", params, seed=tc.seed, epoch=tc.epochs)
        report.to_csv(tmp / "loss.csv")
    return load_checkpoint(cfg.out / "geo" / "encoder")[0]


def embed_stage(cfg, stage_name="geo", scene=None):
    """Embed every grid sequence with the stage's encoder; persists ``<stage>/mts``."""
    stage = f"embed-{stage_name}"
    seq, _ = _scene(cfg, scene)
    ckpt = _require(cfg.out / stage_name / "encoder.bin", stage)
    params, _ = load_checkpoint(ckpt)
    provenance = "geographic" if stage_name == "geo" else "clustering"
    with _stage_dir(cfg, stage, stage_name) as tmp:
        Z = embed_sequences(params, seq, _grid(cfg, seq), provenance=provenance)
        Z.save(tmp / "mts", encoder_checkpoint_hash=sha256_file(ckpt))
    return MTSCollection.load(cfg.out / stage_name / "mts")


def cluster_stage(cfg, stage_name="geo", ks=None, init_from=None):
    """K-means on the stage's MTS for each requested K."""
    stage = f"cluster-{stage_name}"
    Z = MTSCollection.load(_require(cfg.out / stage_name / "mts.bin", stage).with_suffix(""))
    ks = cfg.ks if ks is None else tuple(ks)
    seed_stage = "geo-cluster" if stage_name == "geo" else "refine-cluster"
    with _stage_dir(cfg, stage, stage_name) as tmp:
        for K in ks:
            kc = cfg.kmeans_config(K, seed_stage)
            init = None
            if init_from is not None and K in init_from:
                init = init_from[K]
            res = lloyd(Z, kc, init=init)
            res.save(tmp / f"kmeans_K{K}", seed=kc.seed)
    return {K: load_result(cfg, stage_name, K) for K in ks}


def load_result(cfg, stage_name, K):
    prefix = cfg.out / stage_name / f"kmeans_K{K}"
    _require(prefix.with_suffix(".json"), f"cluster-{stage_name}")
    return KMeansResult.load(prefix)


def run_geo_stage(cfg, scene=None):
    """Steps 1.1-1.2: returns ``(f^g, Z^g, {K: result})``."""
    scene = _scene(cfg, scene)
    params = train_geo(cfg, scene)
    Z = embed_stage(cfg, "geo", scene)
    return params, Z, cluster_stage(cfg, "geo")


# ---------------------------------------------------------------------------
# stage 2: clustering-based refinement

def refine_train(cfg, scene=None):
    stage = "refine"
    seq, _ = _scene(cfg, scene)
    params_geo, _ = load_checkpoint(_require(cfg.out / "geo" / "encoder.bin", stage))
    geo = load_result(cfg, "geo", cfg.refine_k)
    grid = _grid(cfg, seq)
    with _stage_dir(cfg, stage, "refine") as tmp:
        sampler = ClusterSamplerConfig(M=cfg.M, seed=stage_seed(cfg.seed, "refine-sample"))
        triplets = sample_cluster_triplets(seq, grid, geo.partition, geo.centroids, sampler,
                                           mode=cfg.mode)
        save_triplets_csv(tmp / "triplets.csv", triplets)
        tc = replace(cfg.refine_train, seed=stage_seed(cfg.seed, "refine-train"))
        if tc.epochs > 0:
            params, report = resume_train(params_geo, triplet_tiles(seq, triplets, grid.tile_size),
                                          tc, log=lambda e, v: log.info("refine epoch %d: %.6g", e, v))
        else:
            params, report = params_geo.copy(), LossReport()
        save_checkpoint(tmp / "encoder", params, seed=tc.seed, epoch=tc.epochs)
        report.to_csv(tmp / "loss.csv")
    return load_checkpoint(cfg.out / "refine" / "encoder")[0]


def refinement_summary(cfg, labels=None):
    """Before/after comparison of the refine-K partitions."""
    stage = "refine-summary"
    Zg = MTSCollection.load(_require(cfg.out / "geo" / "mts.bin", stage).with_suffix(""))
    Zc = MTSCollection.load(_require(cfg.out / "refine" / "mts.bin", stage).with_suffix(""))
    K = cfg.refine_k
    rg, rc = load_result(cfg, "geo", K), load_result(cfg, "refine", K)
    summary = {"K": K, "silhouette_space": "embedded",
               "geo": {"silhouette": embedded_space_scores(Zg, rg.partition).silhouette,
                       "error": rg.error},
               "refine": {"silhouette": embedded_space_scores(Zc, rc.partition).silhouette,
                          "error": rc.error}}
    if labels is not None:
        summary["geo"]["ari"] = adjusted_rand_index(rg.partition, labels)
        summary["refine"]["ari"] = adjusted_rand_index(rc.partition, labels)
    with _stage_dir(cfg, stage, "refine") as tmp:
        _write_json(tmp / "summary.json", summary)
    return summary


def run_refine_stage(cfg, scene=None):
    """Steps 2.1-2.2: returns ``(f^c, Z^c, {K: result}, summary)``."""
    scene = _scene(cfg, scene)
    params = refine_train(cfg, scene)
    Z = embed_stage(cfg, "refine", scene)
    init = None
    if cfg.warm_start:
        init = {K: load_result(cfg, "geo", K).centroids for K in cfg.ks}
    results = cluster_stage(cfg, "refine", init_from=init)
    return params, Z, results, refinement_summary(cfg, scene[1])


# ---------------------------------------------------------------------------
# analysis

def _mosaic(tiles):
    """``(rows, T, C, s, s)`` tiles -> one RGB image, a row per entry."""
    rows, T, C, s, _ = tiles.shape
    rgb = tiles[:, :, :3] if C >= 3 else np.repeat(tiles[:, :, :1], 3, axis=2)
    img = rgb.transpose(0, 3, 1, 4, 2).reshape(rows * s, T * s, 3)
    return np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)


def analyze_partition(cfg, seq, grid, Z, res, labels, tmp, tag):
    """Map, projection, tree, representatives and scores for one partition."""
    K = res.partition.K
    basis = pca_fit(Z)
    colors = centroid_colors(basis, res.centroids)
    save_png(tmp / f"{tag}_map.png", render_cluster_map(grid, res.partition, colors))
    out = {"K": K, "colors": colors.hex(), "error": res.error,
           "geographic": geographic_space_scores(grid, res.partition).to_dict()
           if K >= 2 else None,
           "embedded": embedded_space_scores(Z, res.partition).to_dict() if K >= 2 else None}
    if labels is not None:
        out["ari_vs_planted"] = adjusted_rand_index(res.partition, labels)
    if Z.m >= 3:
        proj = mds_project(Z, cfg.mode)
        _write_json(tmp / f"{tag}_mds.json", {
            "points": proj.points.tolist(), "cluster": res.partition.assignment.tolist(),
            "colors": colors.hex(), "stress": proj.stress, "non_euclidean": proj.non_euclidean})
    tiles = grid_tiles(seq, grid)
    medoids = [medoid(Z.values[res.partition.members(k)], res.centroids[k], cfg.mode,
                      indices=res.partition.members(k)) for k in range(K)]
    out["medoids"] = medoids
    save_png(tmp / f"{tag}_medoids.png", _mosaic(tiles[medoids]))
    if K >= 2:
        tree = semantic_tree(res.centroids, res.partition, cfg.mode)
        _write_json(tmp / f"{tag}_tree.json", tree.to_dict())
        (tmp / f"{tag}_tree.dot").write_text(tree.to_dot())
        reps = []
        for a, b, _ in tree.edges:
            for w in INTERPOLATION_WEIGHTS:
                zw = interpolate(res.centroids[a], res.centroids[b], w)
                reps.append({"a": a, "b": b, "w": w,
                             "grid_index": nearest_sequence(Z, zw, cfg.mode)})
        out["interpolations"] = reps
        if reps:
            save_png(tmp / f"{tag}_interpolations.png",
                     _mosaic(tiles[[r["grid_index"] for r in reps]]))
    return out


def run_analysis(cfg, scene=None):
    stage = "analyze"
    seq, labels = _scene(cfg, scene)
    grid = _grid(cfg, seq)
    report = {"silhouette_space_note": "geographic = tile-center pixel coordinates; "
                                       "embedded = flattened MTS, Euclidean"}
    with _stage_dir(cfg, stage, "analysis") as tmp:
        for stage_name in ("geo", "refine"):
            mts_path = cfg.out / stage_name / "mts.bin"
            if stage_name == "geo":
                _require(mts_path, stage)
            elif not mts_path.exists():
                continue
            Z = MTSCollection.load(mts_path.with_suffix(""))
            report[stage_name] = {}
            for K in cfg.ks:
                res = load_result(cfg, stage_name, K)
                report[stage_name][str(K)] = analyze_partition(
                    cfg, seq, grid, Z, res, labels, tmp, f"{stage_name}_K{K}")
        # pixel-mean baseline on the same grid, compared in geographic space
        B = mean_rgb_features(seq, grid.tile_size)
        report["baseline"] = {}
        for K in cfg.ks:
            res = lloyd(B, cfg.kmeans_config(K, "baseline"))
            entry = {"error": res.error}
            if K >= 2:
                entry["geographic"] = geographic_space_scores(grid, res.partition).to_dict()
            if labels is not None:
                entry["ari_vs_planted"] = adjusted_rand_index(res.partition, labels)
            report["baseline"][str(K)] = entry
            res.save(tmp / f"baseline_kmeans_K{K}", seed=cfg.kmeans_config(K, "baseline").seed)
        _write_json(tmp / "report.json", report)
    return report


def run_all(cfg):
    """Every stage in order; returns the refinement summary and analysis report."""
    cfg.out.mkdir(parents=True, exist_ok=True)
    scene = load_scene(cfg)
    if cfg.scene_dir is None:
        emit_synthetic(cfg)
    run_geo_stage(cfg, scene)
    *_, summary = run_refine_stage(cfg, scene)
    return {"refinement": summary, "analysis": run_analysis(cfg, scene)}
