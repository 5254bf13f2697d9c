"""End-to-end generation: compose a scene, mesh it, extract ground truth.

Output tree for ``run_pipeline``::

    DIR/scene.json                  placeholders, camera, config and seed
    DIR/meshes/terrain.ply          view-adaptive terrain mesh (instance 0)
    DIR/meshes/assets.ply           every placed asset, camera independent
    DIR/meshes/*.obj                optional OBJ copies
    DIR/gt/depth.pfm, depth.png     z-depth (left view); PNG is 16-bit with a sidecar
    DIR/gt/distance.pfm             along-ray distance
    DIR/gt/depth_right.pfm          z-depth of the right stereo view
    DIR/gt/disparity.pfm, .png      f * baseline / z
    DIR/gt/flow.pfm                 3 channels: flow x, flow y, valid
    DIR/gt/flow_x.png, flow_y.png   16-bit with offset sidecars
    DIR/gt/normals.pfm              camera-frame plane-fit normals, NaN where invalid
    DIR/gt/occlusion.png            boundary mask
    DIR/gt/instance.png, labels.png instance ids and per-kind labels (id + 1, 0 = miss)
    DIR/gt/face_stats.json          per-face pixel and world areas
    DIR/gt/cameras.json             left/right/flow cameras
    DIR/manifest.json               hashes of every file above
    DIR/profile.json                timings, triangle counts, peak RSS

Everything except ``profile.json`` is a pure function of the run config.
"""

from __future__ import annotations

import hashlib
import json
import os
import resource
import sys
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import groundtruth as GT
from . import io as IO
from . import scenetypes as ST
from .assets import instantiate
from .camera import CameraModel
from .mesh import Mesh, merge
from .meshing import SphericalGrid, spherical_marching_cubes
from .scene import SceneGraph, include_assets, make_stereo_rig, place_assets, sample_ground_points, select_camera

STAGES = ("compose", "mesh", "gt")
THREADS_ENV = "PROCWORLD_THREADS"
MANIFEST_FORMAT = "procworld-manifest/1"
VOLATILE = ("profile.json", "manifest.json")


@dataclass
class RunConfig:
    scene_type: str
    seed: int
    out_dir: str
    width: int = 256
    height: int = 144
    target_px: float | None = None  # None: take the scene type's value
    baseline: float = 0.1
    stages: tuple[str, ...] = STAGES
    camera_seed: int | None = None  # None: the global seed
    mesh_formats: tuple[str, ...] = ("ply",)
    flow_step: float = 0.25  # forward motion of the second flow frame, metres

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ValueError("resolution must be at least 16x16")
        bad = set(self.stages) - set(STAGES)
        if bad:
            raise ValueError(f"unknown stages {sorted(bad)}; choose from {STAGES}")
        if set(self.mesh_formats) - {"ply", "obj"}:
            raise ValueError("mesh formats are 'ply' and 'obj'")
        if self.baseline < 0:
            raise ValueError("baseline must be >= 0")

    @property
    def effective_camera_seed(self) -> int:
        return self.seed if self.camera_seed is None else self.camera_seed


def seed_documentation(cfg: RunConfig) -> str:
    return (
        f"global seed {cfg.seed}; camera seed {cfg.effective_camera_seed}; "
        "child seeds are keyed blake2b substreams of the global seed: "
        "terrain op i -> substream(seed, 'terrain', i), "
        "placement -> substream(seed, 'placement', ...), "
        "asset variant -> substream(seed, 'asset', kind, j), "
        "camera attempt a -> substream(camera_seed, 'camera', a)"
    )


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def peak_rss_mb() -> float:
    kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return kb / (1024.0 * 1024.0) if sys.platform == "darwin" else kb / 1024.0


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# stages


def compose(cfg: RunConfig) -> SceneGraph:
    config = ST.load_scene_type(cfg.scene_type)
    terrain = ST.build_terrain(config, cfg.seed)
    lo, hi = ST.region_of(config)
    placeholders = []
    choices = include_assets(ST.asset_choices(config), cfg.seed)
    if terrain is not None and choices:
        points = sample_ground_points(terrain, (lo, hi), ST.placement_rule(config, cfg.seed), cfg.seed)
        placeholders = place_assets(points, choices, cfg.seed, variants=config.get("asset_variants", 4))
    scene = SceneGraph(terrain, placeholders, [], cfg.seed, config)
    cons = ST.camera_constraints(config, cfg.width, cfg.height)
    scene.cameras.append(select_camera(scene, cons, cfg.effective_camera_seed))
    return scene


def object_ids(scene: SceneGraph) -> dict[str, int]:
    """Label per asset kind, in config order; terrain is 0."""
    kinds = [a["kind"] for a in scene.config.get("assets", [])]
    return {k: i + 1 for i, k in enumerate(dict.fromkeys(kinds))}


def mesh_assets(scene: SceneGraph, threads: int = 1) -> Mesh:
    ids = object_ids(scene)
    jobs = [(ph, ids.get(ph.kind, len(ids) + 1)) for ph in scene.placeholders]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda j: instantiate(*j), jobs))
    else:
        parts = [instantiate(*j) for j in jobs]
    return merge(parts) if parts else Mesh.empty()


def mesh_terrain(scene: SceneGraph, camera: CameraModel, target_px: float | None = None) -> tuple[Mesh, dict]:
    if scene.terrain is None:
        return Mesh.empty(), {}
    m = scene.config.get("mesh", {})
    grid = SphericalGrid(*m.get("grid", (64, 64, 128)))
    px = target_px if target_px is not None else float(m.get("target_px", 1.0))
    res = spherical_marching_cubes(scene.terrain.sdf, camera, grid, px, lipschitz=float(m.get("lipschitz", 1.0)))
    return res.mesh.with_ids(instance_id=0, object_id=0), res.stats


def extract_ground_truth(scene_mesh: Mesh, camera: CameraModel, baseline: float, flow_step: float, labels: dict) -> dict:
    """All ground-truth layers for the left view of a stereo rig."""
    left, right = make_stereo_rig(camera, baseline)
    fb = GT.rasterize(scene_mesh, left)
    fb_r = GT.rasterize(scene_mesh, right)
    # second flow frame: step forward along the optical axis
    moved = CameraModel(
        left.width, left.height, left.fov_y, left.rotation, left.translation - np.array([0.0, 0.0, flow_step]), left.near, left.far
    )
    flow, flow_valid = GT.flow_static(fb, left, moved)
    normals, nvalid = GT.normals_from_depth(fb, 2)
    return {
        "fb": fb,
        "depth_right": fb_r.depth,
        "disparity": GT.disparity(fb, (left, right)),
        "flow": flow,
        "flow_valid": flow_valid,
        "normals": np.where(nvalid[..., None], normals, np.nan),
        "occlusion": GT.occlusion_boundaries(fb, scene_mesh),
        "instance": fb.instance_id,
        "labels": GT.instance_segmentation(fb, labels),
        "stats": GT.face_pixel_stats(fb, scene_mesh),
        "cameras": {"left": left.to_dict(), "right": right.to_dict(), "flow": moved.to_dict()},
    }


# --------------------------------------------------------------------------
# writers


def _write_mesh(out: Path, name: str, mesh: Mesh, formats) -> None:
    IO.write_ply(out / f"{name}.ply", mesh)
    if "obj" in formats:
        IO.write_obj(out / f"{name}.obj", mesh)


def _write_gt(out: Path, gt: dict) -> None:
    fb = gt["fb"]
    IO.write_pfm(out / "depth.pfm", fb.depth)
    IO.write_png16(out / "depth.png", fb.depth, unit="m")
    IO.write_pfm(out / "distance.pfm", fb.distance)
    IO.write_pfm(out / "depth_right.pfm", gt["depth_right"])
    IO.write_pfm(out / "disparity.pfm", gt["disparity"])
    IO.write_png16(out / "disparity.png", gt["disparity"], unit="px")
    flow, valid = gt["flow"], gt["flow_valid"]
    IO.write_pfm(out / "flow.pfm", np.dstack([np.nan_to_num(flow, nan=0.0), valid.astype(np.float32)]))
    for c, axis in enumerate("xy"):
        IO.write_png16(out / f"flow_{axis}.png", np.where(valid, flow[..., c], np.nan), unit="px", signed=True)
    IO.write_pfm(out / "normals.pfm", gt["normals"])
    IO.write_mask_png(out / "occlusion.png", gt["occlusion"])
    IO.write_label_png(out / "instance.png", gt["instance"])
    IO.write_label_png(out / "labels.png", gt["labels"])
    IO.write_json(out / "face_stats.json", gt["stats"])
    IO.write_json(out / "cameras.json", gt["cameras"])


def build_manifest(cfg: RunConfig, out: Path, completed, failed: dict | None) -> dict:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.relative_to(out).as_posix() not in VOLATILE)
    return {
        "format": MANIFEST_FORMAT,
        "scene_type": cfg.scene_type,
        "seed": cfg.seed,
        "camera_seed": cfg.effective_camera_seed,
        "resolution": [cfg.width, cfg.height],
        "baseline": cfg.baseline,
        "target_px": cfg.target_px,
        "seed_documentation": seed_documentation(cfg),
        "stages_requested": list(cfg.stages),
        "stages_completed": list(completed),
        "status": "complete" if failed is None else "partial",
        "failure": failed,
        "artifacts": [
            {"path": p.relative_to(out).as_posix(), "sha256": sha256_file(p), "bytes": p.stat().st_size} for p in files
        ],
        "volatile": ["profile.json"],
    }


# --------------------------------------------------------------------------
# driver


def run_pipeline(cfg: RunConfig) -> dict:
    """Run the requested stages, reading earlier stages' outputs from disk.

    Returns the manifest (also written to ``manifest.json``).  A failing
    stage stops the run; the manifest then has ``status == "partial"`` and a
    ``failure`` record naming the stage.
    """
    out = Path(cfg.out_dir)
    (out / "meshes").mkdir(parents=True, exist_ok=True)
    threads = thread_count()
    timings: dict[str, float] = {}
    triangles: dict[str, int] = {}
    completed: list[str] = []
    failed = None
    t_start = time.perf_counter()

    for stage in STAGES:
        if stage not in cfg.stages:
            continue
        t0 = time.perf_counter()
        try:
            if stage == "compose":
                scene = compose(cfg)
                (out / "scene.json").write_text(scene.dumps() + "\n")
            elif stage == "mesh":
                scene = SceneGraph.loads((out / "scene.json").read_text())
                camera = scene.cameras[0].with_resolution(cfg.width, cfg.height)
                terrain, mstats = mesh_terrain(scene, camera, cfg.target_px)
                assets = mesh_assets(scene, threads)
                _write_mesh(out / "meshes", "terrain", terrain, cfg.mesh_formats)
                _write_mesh(out / "meshes", "assets", assets, cfg.mesh_formats)
                IO.write_json(out / "meshes" / "terrain_stats.json", mstats)
                triangles.update(terrain=terrain.n_faces, assets=assets.n_faces)
            elif stage == "gt":
                scene = SceneGraph.loads((out / "scene.json").read_text())
                camera = scene.cameras[0].with_resolution(cfg.width, cfg.height)
                meshes = [IO.read_ply(out / "meshes" / f"{n}.ply") for n in ("terrain", "assets")]
                scene_mesh = merge(meshes)
                triangles.setdefault("terrain", meshes[0].n_faces)
                triangles.setdefault("assets", meshes[1].n_faces)
                ids = object_ids(scene)
                labels = {ph.instance_id: ids.get(ph.kind, len(ids) + 1) for ph in scene.placeholders}
                labels[0] = 0
                gt = extract_ground_truth(scene_mesh, camera, cfg.baseline, cfg.flow_step, labels)
                (out / "gt").mkdir(exist_ok=True)
                _write_gt(out / "gt", gt)
            completed.append(stage)
        except Exception as exc:  # the manifest records the failure; callers inspect status
            failed = {"stage": stage, "error": f"{type(exc).__name__}: {exc}", "traceback": traceback.format_exc(limit=4)}
        timings[stage] = time.perf_counter() - t0
        if failed:
            break

    t1 = time.perf_counter()
    manifest = build_manifest(cfg, out, completed, failed)
    IO.write_json(out / "manifest.json", manifest)
    timings["manifest"] = time.perf_counter() - t1
    total = time.perf_counter() - t_start
    profile = {
        "stages_s": timings,
        "total_s": total,
        "triangles": {**triangles, "total": int(sum(triangles.values()))},
        "peak_rss_mb": peak_rss_mb(),
        "threads": threads,
        "config": {**asdict(cfg), "stages": list(cfg.stages), "mesh_formats": list(cfg.mesh_formats)},
    }
    IO.write_json(out / "profile.json", profile)
    return manifest


__all__ = ["RunConfig", "run_pipeline", "compose", "mesh_terrain", "mesh_assets", "extract_ground_truth", "STAGES"]
