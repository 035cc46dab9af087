"""Command line entry point: ``tilemts <subcommand> [--config ...]``."""
import argparse
import json
import logging
import sys
from dataclasses import replace

from .errors import TileMTSError
from .mts import DistanceMode
from . import pipeline


def _config(args):
    if args.config:
        cfg = pipeline.PipelineConfig.load(args.config)
    else:
        cfg = pipeline.desk_config()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    if args.k:
        ks = tuple(int(k) for part in args.k for k in str(part).split(","))
        changes["ks"] = ks
        if cfg.refine_k not in ks:
            changes["refine_k"] = max(ks)
    if args.distance_mode is not None:
        changes["mode"] = DistanceMode(args.distance_mode)
    cfg = replace(cfg, **changes) if changes else cfg
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def cmd_synth(cfg, args):
    print(pipeline.emit_synthetic(cfg, fmt=args.format))


def cmd_train_geo(cfg, args):
    pipeline.train_geo(cfg)
    print(cfg.out / "geo" / "encoder.bin")


def cmd_embed(cfg, args):
    Z = pipeline.embed_stage(cfg, args.stage)
    print(f"{args.stage}: m={Z.m} T={Z.T} d={Z.d}")


def cmd_cluster(cfg, args):
    results = pipeline.cluster_stage(cfg, args.stage)
    _print({K: {"error": r.error, "iterations": r.iterations} for K, r in results.items()})


def cmd_refine(cfg, args):
    *_, summary = pipeline.run_refine_stage(cfg)
    _print(summary)


def cmd_analyze(cfg, args):
    report = pipeline.run_analysis(cfg)
    _print({"report": str(cfg.out / "analysis" / "report.json"),
            "baseline": report["baseline"]})


def cmd_run_all(cfg, args):
    out = pipeline.run_all(cfg)
    _print(out["refinement"])


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON (default: desk-scale synthetic run)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--k", action="append", help="cluster counts, e.g. --k 3,4,5")
    common.add_argument("--distance-mode", choices=[m.value for m in DistanceMode])
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tilemts", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", parents=[common], help="write the synthetic scene")
    p.add_argument("--format", choices=["raw", "png"], default="raw")
    p.set_defaults(func=cmd_synth)
    sub.add_parser("train-geo", parents=[common], help="train the geographic encoder"
                   ).set_defaults(func=cmd_train_geo)
    for name, func in (("embed", cmd_embed), ("cluster", cmd_cluster)):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--stage", choices=["geo", "refine"], default="geo")
        p.set_defaults(func=func)
    sub.add_parser("refine", parents=[common], help="clustering-based refinement"
                   ).set_defaults(func=cmd_refine)
    sub.add_parser("analyze", parents=[common]).set_defaults(func=cmd_analyze)
    sub.add_parser("run-all", parents=[common]).set_defaults(func=cmd_run_all)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        args.func(cfg, args)
    except TileMTSError as exc:
        stage = getattr(exc, "stage", args.command)
        msg = str(exc) if str(exc).startswith("[") else f"[{stage}] {exc}"
        print(f"tilemts: error: {msg}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"tilemts: error: [{args.command}] {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
