"""
The whole run from one seed
===========================

Equivalent to ``tilemts run-all --out demo_out/full --seed 0``.  Every
artifact is hashed into ``manifest.json``; running twice gives the same hashes.
"""
import json
import os

from tilemts import pipeline

out = os.path.join(os.environ.get("DEMO_OUT", "demo_out"), "full")
cfg = pipeline.desk_config(out, seed=0)
result = pipeline.run_all(cfg)

print(json.dumps(result["refinement"], indent=2))
report = result["analysis"]
for K in map(str, cfg.ks):
    emb = report["geo"][K]["geographic"]["silhouette"]
    base = report["baseline"][K]["geographic"]["silhouette"]
    print(f"K={K}: geographic silhouette embedding {emb:.3f}, pixel mean {base:.3f}, "
          f"ARI {report['geo'][K]['ari_vs_planted']:.3f}")
print(len(pipeline.artifact_hashes(out)), "artifacts in", os.path.join(out, "manifest.json"))
