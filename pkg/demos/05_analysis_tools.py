"""
Reading a clustering
====================

PCA colors, a rendered map, an MDS projection, the semantic tree, interpolation
representatives and validity scores, all on one embedded scene.
"""
import os

from tilemts.analysis import (centroid_colors, embedded_space_scores, geographic_space_scores,
                              interpolate, mds_project, nearest_sequence, pca_fit,
                              render_cluster_map, save_png, semantic_tree)
from tilemts.encoder import EncoderConfig, TrainConfig, init_encoder, train
from tilemts.kmeans import KMeansConfig, lloyd
from tilemts.mts import embed_sequences
from tilemts.raster import decompose_grid, four_zone_spec, generate_synthetic_scene
from tilemts.triplets import GeoSamplerConfig, sample_geo_triplets, triplet_tiles

out = os.environ.get("DEMO_OUT", "demo_out")
os.makedirs(out, exist_ok=True)

spec = four_zone_spec(rows=10, cols=10)
seq, _ = generate_synthetic_scene(spec, seed=0)
grid = decompose_grid(seq.width, seq.height, 16)
trips = sample_geo_triplets(seq, GeoSamplerConfig(N=1000, r=16, tile_size=16, seed=1))
params, _ = train(init_encoder(EncoderConfig(tile_size=16), 0), triplet_tiles(seq, trips, 16),
                  TrainConfig(epochs=15, seed=2))
Z = embed_sequences(params, seq, grid)
res = lloyd(Z, KMeansConfig(K=4))

# colors come from the first three principal components of the centroids
colors = centroid_colors(pca_fit(Z), res.centroids)
save_png(os.path.join(out, "cluster_map.png"), render_cluster_map(grid, res.partition, colors))
print("cluster colors:", colors.hex())

proj = mds_project(Z)
print("MDS stress:", round(proj.stress, 4), "non-Euclidean:", proj.non_euclidean)

tree = semantic_tree(res.centroids, res.partition)
print(tree.to_dot())

for a, b, _ in tree.edges:
    reps = [nearest_sequence(Z, interpolate(res.centroids[a], res.centroids[b], w))
            for w in (0.25, 0.5, 0.75)]
    print(f"edge {a}-{b}: representatives {reps}")

print("geographic:", geographic_space_scores(grid, res.partition).to_dict())
print("embedded:", embedded_space_scores(Z, res.partition).to_dict())
