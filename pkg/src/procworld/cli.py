"""Command-line entry point.

::

    procworld {compose|mesh|gt|all} --config desert --seed 42 --res 256x144 -o out/
    procworld compose --config desert --seed 42 -o scene.json
    procworld graph compile graph.json --emit graph.py
    procworld graph eval graph.json --at 1,2,3
    procworld graph sample graph.json --seed 7
    procworld list

Thread count for asset instantiation comes from ``PROCWORLD_THREADS``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import nodegraph as NG
from . import pipeline as P
from .scenetypes import load_scene_type, scene_type_names


def parse_res(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"resolution must look like 256x144, got {text!r}") from None
    if w < 16 or h < 16:
        raise argparse.ArgumentTypeError("resolution must be at least 16x16")
    return w, h


def parse_point(text: str) -> np.ndarray:
    try:
        p = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"point must look like x,y,z, got {text!r}") from None
    if p.shape != (3,):
        raise argparse.ArgumentTypeError("point needs exactly three coordinates")
    return p


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="procworld", description="Procedural SDF scenes with exact ground truth.")
    sub = ap.add_subparsers(dest="command", required=True)

    for name in ("compose", "mesh", "gt", "all"):
        sp = sub.add_parser(name, help=f"run the {name} stage" if name != "all" else "run every stage")
        sp.add_argument("--config", required=True, help="scene type name or path to a scene-type JSON")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--camera-seed", type=int, default=None, help="re-roll only the camera")
        sp.add_argument("--res", type=parse_res, default=(256, 144), help="WxH")
        sp.add_argument("-o", "--out", required=True, help="output directory (compose also accepts a .json path)")
        sp.add_argument("--target-px", type=float, default=None, help="target triangle edge in pixels")
        sp.add_argument("--baseline", type=float, default=0.1, help="stereo baseline in metres")
        sp.add_argument("--mesh-format", choices=("ply", "obj", "both"), default="ply")

    g = sub.add_parser("graph", help="node-graph tools")
    gsub = g.add_subparsers(dest="graph_command", required=True)
    c = gsub.add_parser("compile", help="validate and emit Python source")
    c.add_argument("graph")
    c.add_argument("--emit", required=True, help="where to write the source ('-' for stdout)")
    c.add_argument("--output", default=None, help="graph output to compile (default: first)")
    c.add_argument("--inline", action="store_true", help="inline group calls")
    e = gsub.add_parser("eval", help="evaluate a graph output at a point")
    e.add_argument("graph")
    e.add_argument("--at", type=parse_point, required=True)
    e.add_argument("--output", default=None)
    s = gsub.add_parser("sample", help="resolve distribution annotations")
    s.add_argument("graph")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("-o", "--out", default=None, help="write the sampled graph here instead of stdout")

    sub.add_parser("list", help="list shipped scene types")
    return ap


def _run(args) -> int:
    stages = P.STAGES if args.command == "all" else (args.command,)
    formats = ("ply", "obj") if args.mesh_format == "both" else (args.mesh_format,)
    w, h = args.res
    load_scene_type(args.config)  # fail fast on unknown scene types
    if args.command == "compose" and args.out.endswith(".json"):
        cfg = P.RunConfig(args.config, args.seed, str(Path(args.out).parent), w, h, args.target_px, args.baseline, stages, args.camera_seed)
        scene = P.compose(cfg)
        Path(args.out).write_text(scene.dumps() + "\n")
        print(f"wrote {args.out}")
        return 0
    cfg = P.RunConfig(
        args.config, args.seed, args.out, w, h, args.target_px, args.baseline, stages, args.camera_seed, formats
    )
    manifest = P.run_pipeline(cfg)
    if manifest["status"] != "complete":
        fail = manifest["failure"]
        print(f"stage {fail['stage']} failed: {fail['error']}", file=sys.stderr)
        return 1
    print(f"wrote {len(manifest['artifacts'])} artifacts to {args.out}")
    return 0


def _graph(args) -> int:
    doc = NG.load_graph(args.graph)
    if args.graph_command == "compile":
        _, src = NG.transpile(doc, args.output, inline_groups=args.inline)
        if args.emit == "-":
            sys.stdout.write(src)
        else:
            Path(args.emit).write_text(src)
        return 0
    if args.graph_command == "eval":
        names = [args.output] if args.output else list(doc.outputs)
        for name in names:
            value = NG.lower(doc, name).evaluate(args.at[None, :])
            print(f"{name} = {json.dumps(np.asarray(value)[0].tolist())}")
        return 0
    sampled = NG.dump_graph(NG.sample_annotations(doc, args.seed))
    if args.out:
        Path(args.out).write_text(sampled + "\n")
    else:
        print(sampled)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "graph":
            return _graph(args)
        if args.command == "list":
            print("\n".join(scene_type_names()))
            return 0
        return _run(args)
    except NG.GraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (KeyError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
