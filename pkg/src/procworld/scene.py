"""Scene composition: ground sampling, asset scattering and camera selection.

Placement probes a coarse (1 m) marching-cubes surface of the terrain and
scatters darts over it by area.  Each dart survives a density mask, a slope
gate and a Poisson-disk hard-core test against earlier survivors.  Cameras
are rejection-sampled and scored on a small sphere-traced depth probe.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import fields as F
from .camera import CameraModel
from .fields import FieldProgram
from .meshing import marching_cubes_uniform
from .seeding import rng, substream
from .terrain import TerrainElement
from .tracing import sphere_trace, trace_camera

EMPTY_SPACE = 1e6


@dataclass(frozen=True)
class PlacementRule:
    density: float = 1.0  # darts per m^2 of surface
    mask: FieldProgram | None = None  # acceptance probability, clipped to [0, 1]
    max_slope: float = math.radians(30)
    min_spacing: float = 1.0

    def __post_init__(self):
        if self.density < 0:
            raise ValueError("density must be >= 0")
        if self.min_spacing <= 0:
            raise ValueError("min spacing must be > 0")


@dataclass(frozen=True, eq=False)
class Placeholder:
    kind: str
    seed: int
    rotation: np.ndarray
    translation: np.ndarray
    footprint: float
    tags: tuple[str, ...] = ()
    yaw: float = 0.0
    instance_id: int = 0

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.isfinite(rot).all() and np.isfinite(t).all()):
            raise ValueError("placeholder transform must be finite")
        if self.footprint <= 0:
            raise ValueError("footprint radius must be > 0")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "tags", tuple(self.tags))

    @property
    def up(self) -> np.ndarray:
        return self.rotation[:, 2]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "footprint": self.footprint,
            "tags": list(self.tags),
            "yaw": self.yaw,
            "instance_id": self.instance_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Placeholder":
        return cls(**{**d, "tags": tuple(d.get("tags", ()))})


@dataclass(eq=False)
class SceneGraph:
    terrain: TerrainElement | None
    placeholders: list[Placeholder] = field(default_factory=list)
    cameras: list[CameraModel] = field(default_factory=list)
    seed: int = 0
    config: dict = field(default_factory=dict)  # how to rebuild the terrain

    def proxy_sdf(self) -> FieldProgram:
        """Terrain unioned with footprint spheres for every placeholder."""
        parts = [] if self.terrain is None else [self.terrain.sdf]
        if self.placeholders:
            centers = np.array([p.translation + p.up * p.footprint for p in self.placeholders])
            radii = np.array([p.footprint for p in self.placeholders])
            parts.append(_spheres(centers, radii))
        if not parts:
            return F.constant(EMPTY_SPACE)
        out = parts[0]
        for p in parts[1:]:
            out = F.sdf_combine("union", out, p)
        return out

    def tag_sdfs(self) -> dict[str, FieldProgram]:
        """One SDF per tag: the terrain tag plus every placeholder kind and tag."""
        out: dict[str, FieldProgram] = {}
        if self.terrain is not None:
            out["terrain"] = self.terrain.sdf
        groups: dict[str, list[Placeholder]] = {}
        for p in self.placeholders:
            for t in {p.kind, *p.tags}:
                groups.setdefault(t, []).append(p)
        for t, ps in sorted(groups.items()):
            centers = np.array([p.translation + p.up * p.footprint for p in ps])
            out[t] = _spheres(centers, np.array([p.footprint for p in ps]))
        return out

    def to_dict(self) -> dict:
        return {
            "format": "procworld-scene/1",
            "seed": self.seed,
            "config": self.config,
            "terrain_tag": None if self.terrain is None else self.terrain.tag,
            "placeholders": [p.to_dict() for p in self.placeholders],
            "cameras": [c.to_dict() for c in self.cameras],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict, terrain: TerrainElement | None = None) -> "SceneGraph":
        """Rebuild a scene; pass ``terrain`` or let the config rebuild it."""
        if terrain is None and d.get("config"):
            from .scenetypes import build_terrain

            terrain = build_terrain(d["config"], d["seed"])
        return cls(
            terrain,
            [Placeholder.from_dict(p) for p in d["placeholders"]],
            [CameraModel.from_dict(c) for c in d["cameras"]],
            d["seed"],
            d.get("config", {}),
        )

    @classmethod
    def loads(cls, text: str, terrain: TerrainElement | None = None) -> "SceneGraph":
        return cls.from_dict(json.loads(text), terrain)


def sphere_set_sdf(centers: np.ndarray, radii: np.ndarray, points: np.ndarray, k: int = 8) -> np.ndarray:
    """Exact union-of-spheres SDF using a k-d tree, brute force where the k nearest do not suffice."""
    c = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    r = np.asarray(radii, dtype=np.float64).reshape(-1)
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    k = min(k, len(c))
    dist, idx = cKDTree(c).query(p, k=k)
    dist, idx = dist.reshape(len(p), k), idx.reshape(len(p), k)
    val = (dist - r[idx]).min(axis=1)
    if k < len(c):
        # any sphere beyond the k-th neighbour is at least d_k - r_max away
        unsure = dist[:, -1] - r.max() < val
        if unsure.any():
            q = p[unsure]
            val[unsure] = (np.linalg.norm(q[:, None, :] - c[None], axis=2) - r[None]).min(axis=1)
    return val


def _spheres(centers: np.ndarray, radii: np.ndarray) -> FieldProgram:
    c = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    r = np.asarray(radii, dtype=np.float64).reshape(-1)
    return F.custom(lambda p: sphere_set_sdf(c, r, p), label="placeholder_spheres", count=len(c))


# --------------------------------------------------------------------------
# ground sampling


@dataclass(frozen=True, eq=False)
class GroundPoints:
    points: np.ndarray  # (N, 3)
    normals: np.ndarray  # (N, 3)
    darts: int = 0

    def __len__(self) -> int:
        return len(self.points)


def sdf_normals(sdf, points: np.ndarray, h: float = 0.05) -> np.ndarray:
    """Unit central-difference gradients (outward normals for solid-negative SDFs)."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    g = np.empty_like(p)
    for a in range(3):
        d = np.zeros(3)
        d[a] = h
        g[:, a] = sdf(p + d) - sdf(p - d)
    n = np.linalg.norm(g, axis=1, keepdims=True)
    return np.where(n > 0, g / np.where(n > 0, n, 1.0), np.array([0.0, 0.0, 1.0]))


def surface_darts(mesh, count: int, r: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Area-uniform random points on a mesh and their face indices."""
    areas = mesh.face_areas()
    total = areas.sum()
    if count == 0 or total <= 0:
        return np.zeros((0, 3)), np.zeros(0, np.int64)
    face = np.minimum(np.searchsorted(np.cumsum(areas) / total, r.random(count), side="right"), len(areas) - 1)
    u, v = r.random(count), r.random(count)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    tri = mesh.vertices[mesh.faces[face]]
    pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
    return pts, face


def hard_core_filter(points: np.ndarray, spacing: float) -> np.ndarray:
    """Sequential dart acceptance: keep a point unless an earlier kept one is closer than ``spacing``."""
    n = len(points)
    keep = np.zeros(n, bool)
    if n == 0:
        return keep
    pairs = cKDTree(points).query_pairs(spacing * (1 - 1e-12), output_type="ndarray")
    if len(pairs) == 0:
        keep[:] = True
        return keep
    lo, hi = pairs.min(axis=1), pairs.max(axis=1)
    order = np.argsort(lo, kind="stable")
    lo, hi = lo[order], hi[order]
    start = np.searchsorted(lo, np.arange(n + 1))
    killed = np.zeros(n, bool)
    for i in range(n):
        if killed[i]:
            continue
        keep[i] = True
        killed[hi[start[i] : start[i + 1]]] = True
    return keep


def sample_ground_points(
    terrain: TerrainElement | FieldProgram,
    region,
    rule: PlacementRule,
    seed: int,
    *,
    resolution: float = 1.0,
    surface=None,
) -> GroundPoints:
    """Poisson-disk points on the terrain surface inside ``region`` (an AABB).

    Darts number ``density * surface area``.  A dart survives with
    probability ``mask(p)`` when the surface normal is within ``max_slope``
    of +z, and is kept only if no earlier kept dart lies within
    ``min_spacing``.  ``surface`` may pass a precomputed probe mesh.
    """
    sdf = terrain.sdf if isinstance(terrain, TerrainElement) else terrain
    lo, hi = (np.asarray(x, dtype=np.float64) for x in region)
    if surface is None:
        cells = tuple(int(max(1, math.ceil((b - a) / resolution))) for a, b in zip(lo, hi))
        surface = marching_cubes_uniform(sdf, (lo, hi), cells)
    r = rng(seed, "placement", "darts")
    area = float(surface.face_areas().sum()) if not surface.is_empty() else 0.0
    count = int(r.poisson(rule.density * area)) if area > 0 else 0
    pts, _ = surface_darts(surface, count, r)
    u = r.random(len(pts))
    if len(pts) == 0:
        return GroundPoints(np.zeros((0, 3)), np.zeros((0, 3)), count)
    normals = sdf_normals(sdf, pts)
    ok = normals[:, 2] >= math.cos(rule.max_slope) - 1e-12
    if rule.mask is not None:
        prob = np.clip(np.asarray(rule.mask(pts), dtype=np.float64), 0.0, 1.0)
        ok &= u < prob
    pts, normals = pts[ok], normals[ok]
    keep = hard_core_filter(pts, rule.min_spacing)
    return GroundPoints(pts[keep], normals[keep], count)


# --------------------------------------------------------------------------
# asset placement


@dataclass(frozen=True)
class AssetChoice:
    kind: str
    weight: float = 1.0
    footprint: float = 1.0
    tags: tuple[str, ...] = ()
    probability: float = 1.0  # chance the kind appears in a given scene

    def __post_init__(self):
        if self.weight < 0 or not 0 <= self.probability <= 1 or self.footprint <= 0:
            raise ValueError(f"bad asset choice {self}")


def include_assets(choices, seed: int) -> list[AssetChoice]:
    """Per-scene inclusion: each kind appears with its own probability."""
    return [c for c in choices if rng(seed, "placement", "include", c.kind).random() < c.probability]


def align_up(normal: np.ndarray, yaw: float) -> np.ndarray:
    """Rotation whose z column is ``normal`` and whose x column has heading ``yaw``."""
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    heading = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    x = heading - n * (heading @ n)
    if np.linalg.norm(x) < 1e-9:
        x = np.array([1.0, 0.0, 0.0]) - n * n[0]
    x /= np.linalg.norm(x)
    y = np.cross(n, x)
    return np.stack([x, y, n], axis=1)


def place_assets(
    points: GroundPoints | np.ndarray, choices, seed: int, normals=None, first_id: int = 1, variants: int | None = None
) -> list[Placeholder]:
    """One placeholder per point: weighted kind, uniform yaw, up along the surface normal.

    With ``variants`` set, asset seeds are drawn from a pool of that many
    seeds per kind, so instances can share generated geometry.
    """
    if isinstance(points, GroundPoints):
        pts, nrm = points.points, points.normals
    else:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        nrm = np.tile([0.0, 0.0, 1.0], (len(pts), 1)) if normals is None else np.asarray(normals, dtype=np.float64)
    choices = list(choices)
    if len(pts) == 0 or not choices:
        return []
    w = np.array([c.weight for c in choices], dtype=np.float64)
    if w.sum() <= 0:
        return []
    r = rng(seed, "placement", "assets")
    kinds = r.choice(len(choices), size=len(pts), p=w / w.sum())
    yaws = r.uniform(0.0, 2 * math.pi, size=len(pts))
    if variants is not None:
        pick = rng(seed, "placement", "variant").integers(0, max(1, variants), size=len(pts))
    out = []
    for i, (p, n, k, yaw) in enumerate(zip(pts, nrm, kinds, yaws)):
        c = choices[int(k)]
        aseed = substream(seed, "asset", i) if variants is None else substream(seed, "asset", c.kind, int(pick[i]))
        out.append(
            Placeholder(
                c.kind,
                aseed,
                align_up(n, float(yaw)),
                p,
                c.footprint,
                c.tags,
                float(yaw),
                first_id + i,
            )
        )
    return out


# --------------------------------------------------------------------------
# cameras


class CameraSelectionError(RuntimeError):
    def __init__(self, counts: Counter, attempts: int):
        self.counts = counts
        self.dominant = counts.most_common(1)[0][0] if counts else "none"
        detail = ", ".join(f"{k}: {v}" for k, v in counts.most_common())
        super().__init__(f"no camera after {attempts} attempts; dominant rejection: {self.dominant} ({detail})")


@dataclass(frozen=True)
class CameraConstraints:
    height_mean: float = 1.7
    height_sigma: float = 0.5
    pitch_range: tuple[float, float] = (math.radians(-25), math.radians(5))
    min_distance: float = 0.5
    coverage: tuple[tuple[str, float], ...] = ()  # (tag, minimum fraction of probe pixels)
    region: tuple = ((-10.0, -10.0), (10.0, 10.0))  # xy bounds for the camera position
    ground_top: float = 200.0  # probes for the ground start this high
    candidates: int = 10
    budget: int = 1000
    probe: tuple[int, int] = (64, 36)
    width: int = 256
    height: int = 144
    fov_y: float = math.radians(55)
    near: float = 0.1
    far: float = 200.0
    raise_height: float = 0.0  # extra lift for terrain-only showcase views


@dataclass(frozen=True)
class CameraCandidate:
    camera: CameraModel
    height: float
    score: float
    depth: np.ndarray


def ground_height(sdf, xy: np.ndarray, top: float, far: float) -> np.ndarray:
    """Height of the first surface below ``top`` at each xy; 0 where nothing is hit."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    origins = np.column_stack([xy, np.full(len(xy), top)])
    down = np.tile([0.0, 0.0, -1.0], (len(xy), 1))
    t = sphere_trace(sdf, origins, down, top + far)
    return np.where(np.isfinite(t), top - t, 0.0)


def probe_depth(sdf, camera: CameraModel, probe=(64, 36)) -> np.ndarray:
    """Low-res ray-distance map (inf on miss)."""
    cam = camera.with_resolution(*probe)
    # stop within a quarter probe pixel of the surface
    cone = 0.25 * cam.fov_y / cam.height
    return trace_camera(sdf, cam, eps=1e-3, eps_rel=cone, max_steps=128, bisect_iters=12)


def depth_score(depth: np.ndarray) -> float:
    hit = np.isfinite(depth)
    return float(np.std(depth[hit])) if hit.sum() > 1 else 0.0


def coverage_fractions(scene: SceneGraph, camera: CameraModel, depth: np.ndarray) -> dict[str, float]:
    """Fraction of probe pixels whose hit point is closest to each tag's surface."""
    tags = scene.tag_sdfs()
    hit = np.isfinite(depth)
    out = {t: 0.0 for t in tags}
    if not hit.any() or not tags:
        return out
    probe = camera.with_resolution(depth.shape[1], depth.shape[0])
    rays = probe.pixel_rays().reshape(-1, 3)
    dirs = rays / np.linalg.norm(rays, axis=1, keepdims=True) @ probe.rotation
    pts = probe.position + dirs[hit.ravel()] * depth.ravel()[hit.ravel()][:, None]
    names = list(tags)
    d = np.stack([np.abs(tags[t](pts)) for t in names], axis=1)
    owner = np.argmin(d, axis=1)
    for i, t in enumerate(names):
        out[t] = float((owner == i).sum() / depth.size)
    return out


def evaluate_candidate(scene: SceneGraph, camera: CameraModel, cons: CameraConstraints, sdf=None):
    """``(rejection reason or None, probe depth)`` for one candidate pose."""
    sdf = sdf or scene.proxy_sdf()
    if float(sdf(camera.position[None])[0]) < cons.min_distance:
        return "min-distance", None
    depth = probe_depth(sdf, camera, cons.probe)
    if np.isfinite(depth).any() and depth[np.isfinite(depth)].min() < cons.min_distance:
        return "min-distance", depth
    if cons.coverage:
        cov = coverage_fractions(scene, camera, depth)
        for tag, q in cons.coverage:
            if cov.get(tag, 0.0) < q:
                return f"coverage:{tag}", depth
    return None, depth


def rank_candidates(cands: list[CameraCandidate]) -> CameraCandidate:
    """Largest probe-depth stdev; ties keep the earliest candidate."""
    best = cands[0]
    for c in cands[1:]:
        if c.score > best.score:
            best = c
    return best


def select_camera(scene: SceneGraph, constraints: CameraConstraints | None = None, seed: int = 0) -> CameraModel:
    """Rejection-sample poses and keep the most depth-varied of the accepted ones.

    Attempt ``i`` draws from its own substream, so the result depends only on
    the scene, constraints and seed.
    """
    cons = constraints or CameraConstraints()
    sdf = scene.proxy_sdf()
    (x0, y0), (x1, y1) = cons.region
    accepted: list[CameraCandidate] = []
    rejected: Counter = Counter()
    for attempt in range(cons.budget):
        r = rng(seed, "camera", attempt)
        xy = np.array([r.uniform(x0, x1), r.uniform(y0, y1)])
        height = cons.height_mean + cons.height_sigma * r.standard_normal() + cons.raise_height
        yaw = r.uniform(0, 2 * math.pi)
        pitch = r.uniform(*cons.pitch_range)
        ground = float(ground_height(sdf, xy[None], cons.ground_top, cons.far)[0]) if scene.terrain else 0.0
        pos = np.array([xy[0], xy[1], ground + height])
        cam = CameraModel.from_pose(pos, yaw, pitch, cons.width, cons.height, cons.fov_y, near=cons.near, far=cons.far)
        reason, depth = evaluate_candidate(scene, cam, cons, sdf)
        if reason is not None:
            rejected[reason] += 1
            continue
        accepted.append(CameraCandidate(cam, height, depth_score(depth), depth))
        if len(accepted) == cons.candidates:
            break
    if not accepted:
        raise CameraSelectionError(rejected, cons.budget)
    return rank_candidates(accepted).camera


def make_stereo_rig(camera: CameraModel, baseline: float) -> tuple[CameraModel, CameraModel]:
    """Left camera as given; right one shifted ``baseline`` along camera +x."""
    if baseline < 0:
        raise ValueError("baseline must be >= 0")
    t_right = camera.translation - np.array([baseline, 0.0, 0.0])
    left = CameraModel(camera.width, camera.height, camera.fov_y, camera.rotation, camera.translation, camera.near, camera.far, baseline)
    right = CameraModel(camera.width, camera.height, camera.fov_y, camera.rotation, t_right, camera.near, camera.far, baseline)
    return left, right
