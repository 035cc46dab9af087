"""
K-means on multivariate time series
===================================

Lloyd iterations with k-means++ seeding, checked against exhaustive search
on a tiny instance.
"""
import numpy as np

from tilemts.kmeans import KMeansConfig, brute_force_kmeans, lloyd
from tilemts.mts import DistanceMode, MTSCollection, mts_distance

# two steps, per-step differences (3, 4) and (0, 1)
a, b = np.zeros((2, 2)), np.array([[3.0, 4.0], [0.0, 1.0]])
print("per-step sum:", mts_distance(a, b, DistanceMode.PER_STEP_SUM))
print("concatenated euclidean:", mts_distance(a, b))

coll = MTSCollection(np.array([0.0, 1.0, 10.0, 11.0])[:, None, None])
res = lloyd(coll, KMeansConfig(K=2))
print("assignment", res.partition.assignment, "error", res.error)
print("exhaustive optimum", brute_force_kmeans(coll, 2)[1])

# a larger random instance: the error never goes up between iterations
rng = np.random.default_rng(0)
coll = MTSCollection(rng.normal(size=(150, 4, 3)) + rng.integers(0, 4, (150, 1, 1)) * 2.0)
res = lloyd(coll, KMeansConfig(K=4, restarts=5, rel_tol=0.0))
print("best restart", res.best_restart, "error history", np.round(res.history, 2))
