"""
Refining the encoder with cluster triplets
==========================================

Runs the geographic stage, then resumes training on triplets drawn from the
K=4 partition and compares the two partitions.
"""
import json
import os

from tilemts import pipeline

out = os.path.join(os.environ.get("DEMO_OUT", "demo_out"), "refine_run")
cfg = pipeline.desk_config(out, seed=0)

scene = pipeline.load_scene(cfg)
pipeline.run_geo_stage(cfg, scene)
*_, summary = pipeline.run_refine_stage(cfg, scene)
print(json.dumps(summary, indent=2))
