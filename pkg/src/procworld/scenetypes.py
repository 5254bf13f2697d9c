"""Scene-type configs: JSON files that choose terrain elements, assets and priors.

A config looks like::

    {
      "name": "desert",
      "region": {"min": [-40, -40, -10], "max": [40, 40, 20]},
      "terrain": [{"op": "tile_landscape", ...}, {"op": "voronoi_rocks", ...}],
      "assets": [{"kind": "boulder", "weight": 1, "footprint": 0.8, "probability": 0.9}],
      "placement": {"density": 0.05, "min_spacing": 3.0, "max_slope_deg": 30, "mask": {node graph}},
      "camera": {"height_mean": 1.7, "height_sigma": 0.5, ...},
      "mesh": {"target_px": 1.0, "grid": [32, 32, 64], "lipschitz": 1.5}
    }

``terrain`` is a list of operations applied in order to an accumulating
element: generators (``eroded_rocks``, ``tile_landscape``,
``floating_island``, ``plane``) are unioned in; modifiers
(``voronoi_rocks``, ``caves``) rewrite the accumulated element.  Every
noise seed is offset by a substream of the scene seed.
"""

from __future__ import annotations

import json
import math
from importlib import resources
from pathlib import Path

import numpy as np

from . import fields as F
from . import terrain as T
from .fields import NoiseSpec
from .nodegraph import doc_from_dict, lower, sample_annotations
from .scene import AssetChoice, CameraConstraints, PlacementRule
from .seeding import substream

SEED_MASK = 0x7FFFFFFF


def scene_type_names() -> list[str]:
    root = resources.files("procworld") / "presets" / "scenes"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_scene_type(name_or_path: str | Path) -> dict:
    """Load a config by shipped name (``"desert"``) or by file path."""
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        return json.loads(p.read_text())
    name = str(name_or_path)
    if name not in scene_type_names():
        raise KeyError(f"unknown scene type {name!r}; shipped: {', '.join(scene_type_names())}")
    return json.loads((resources.files("procworld") / "presets" / "scenes" / f"{name}.json").read_text())


def noise_from_dict(d: dict, seed_offset: int = 0) -> NoiseSpec:
    d = dict(d)
    warp = d.pop("warp", None)
    if warp is not None:
        warp = (float(warp["amplitude"]), noise_from_dict(warp["noise"], seed_offset))
    d["seed"] = (int(d.get("seed", 0)) + seed_offset) & SEED_MASK
    return NoiseSpec(warp=warp, **d)


def _offset(seed: int, i: int) -> int:
    return substream(seed, "terrain", i) & SEED_MASK


def build_terrain(config: dict, seed: int) -> T.TerrainElement | None:
    current: T.TerrainElement | None = None
    for i, op in enumerate(config.get("terrain", [])):
        kind = op["op"]
        off = _offset(seed, i)
        new = None
        if kind == "eroded_rocks":
            new = T.eroded_rocks(noise_from_dict(op["noise"], off), op.get("base_height", 0.0), op.get("amplitude", 1.0))
        elif kind == "plane":
            new = T.TerrainElement(F.plane(offset=float(op.get("height", 0.0))), "plane")
        elif kind == "tile_landscape":
            t = op["tile"]
            heights = T.make_tile(
                t["n"], t["extent"], noise_from_dict(t["noise"], off), t.get("amplitude", 1.0), t.get("erosion_iterations", 0)
            )
            heights = heights + float(op.get("base_height", 0.0))
            new = T.tile_landscape(T.TileSpec(heights, t["extent"], op.get("blend_margin", 0.0), off))
        elif kind == "floating_island":
            kw = {k: v for k, v in op.items() if k not in ("op", "noise")}
            if "noise" in op:
                kw["noise"] = noise_from_dict(op["noise"], off)
            new = T.floating_island(**kw)
        elif kind == "voronoi_rocks":
            if current is None:
                raise ValueError("voronoi_rocks needs an earlier terrain element")
            current = T.voronoi_rocks(
                current, op.get("cell_frequency", 0.5), op.get("gap_width", 0.1), seed=off, gap_noise=op.get("gap_noise", 0.5)
            )
            continue
        elif kind == "caves":
            if current is None:
                raise ValueError("caves need an earlier terrain element")
            spec = dict(op.get("spec", {}))
            for key in ("radius_range", "entrance", "heading"):
                if key in spec:
                    spec[key] = tuple(spec[key])
            passages = T.generate_cave_skeleton(T.CaveSystemSpec(seed=off, **spec))
            current = T.carve_caves(current, passages)
            continue
        else:
            raise ValueError(f"unknown terrain op {kind!r}")
        current = new if current is None else T.union(current, new, tag=current.tag)
    return current


def region_of(config: dict) -> tuple[np.ndarray, np.ndarray]:
    r = config["region"]
    return np.asarray(r["min"], dtype=np.float64), np.asarray(r["max"], dtype=np.float64)


def placement_rule(config: dict, seed: int) -> PlacementRule:
    p = config.get("placement", {})
    mask = None
    if p.get("mask") is not None:
        doc = sample_annotations(doc_from_dict(p["mask"]), substream(seed, "placement", "mask"))
        mask = lower(doc)
    return PlacementRule(
        density=float(p.get("density", 0.05)),
        mask=mask,
        max_slope=math.radians(float(p.get("max_slope_deg", 30.0))),
        min_spacing=float(p.get("min_spacing", 2.0)),
    )


def asset_choices(config: dict) -> list[AssetChoice]:
    return [
        AssetChoice(a["kind"], float(a.get("weight", 1.0)), float(a.get("footprint", 1.0)), tuple(a.get("tags", ())), float(a.get("probability", 1.0)))
        for a in config.get("assets", [])
    ]


def camera_constraints(config: dict, width: int, height: int) -> CameraConstraints:
    c = dict(config.get("camera", {}))
    lo, hi = region_of(config)
    span = c.pop("region_fraction", 0.5)
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * span
    kw = {
        "region": ((mid[0] - half[0], mid[1] - half[1]), (mid[0] + half[0], mid[1] + half[1])),
        "ground_top": float(hi[2]),
        "width": width,
        "height": height,
    }
    if "pitch_deg" in c:
        kw["pitch_range"] = tuple(math.radians(x) for x in c.pop("pitch_deg"))
    if "fov_deg" in c:
        kw["fov_y"] = math.radians(c.pop("fov_deg"))
    if "coverage" in c:
        kw["coverage"] = tuple((str(t), float(q)) for t, q in c.pop("coverage"))
    if "probe" in c:
        kw["probe"] = tuple(c.pop("probe"))
    kw.update(c)
    return CameraConstraints(**kw)
