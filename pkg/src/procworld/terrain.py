"""Terrain element library.

Every element is an SDF (meters, solid negative) wrapped in a
:class:`TerrainElement`.  Caves come from a stochastic L-system whose turtle
walk is swept into tapered capsules and carved out of a base element.
Boulders are the one mesh-valued generator here.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import fields as F
from .fields import FieldProgram, NoiseSpec
from .mesh import Mesh
from .seeding import hash_cells, rng

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TerrainElement:
    sdf: FieldProgram
    tag: str
    bounds: tuple[np.ndarray, np.ndarray] | None = None

    def __call__(self, points):
        return self.sdf(points)


def union(*elements: TerrainElement, tag: str = "union") -> TerrainElement:
    sdf = elements[0].sdf
    for e in elements[1:]:
        sdf = F.sdf_combine("union", sdf, e.sdf)
    return TerrainElement(sdf, tag)


# --------------------------------------------------------------------------
# noise-built elements


def eroded_rocks(noise: NoiseSpec, base_height: float = 0.0, amplitude: float = 1.0) -> TerrainElement:
    """Heightfield-like element ``z - base - amplitude * noise(warp(p))``.

    The noise is evaluated in 3D on the warped point, so the warp produces
    overhangs and wind-carved undercuts rather than a pure heightfield.
    """
    z = F.node("separate", F.POSITION, axis=2)
    surface = z if base_height == 0 else F.node("subtract", z, base_height)
    if amplitude != 0:
        surface = F.node("subtract", surface, F.node("multiply", F.noise_field(noise), amplitude))
    return TerrainElement(surface, "eroded_rocks")


def voronoi_rocks(
    parent: TerrainElement,
    cell_frequency: float = 1.0,
    gap_width: float = 0.05,
    *,
    band: float | None = None,
    rock_radius: float | None = None,
    gap_noise: float = 0.5,
    seed: int = 0,
) -> TerrainElement:
    """Break the surface band of ``parent`` into Voronoi cell rocks.

    A cell is active when the parent SDF at its feature point lies within
    ``band`` of zero.  Active cells become solids bounded by their Voronoi
    walls (shrunk by a noisy half gap) and a ball of ``rock_radius`` around the
    feature point; the result is unioned with the parent.
    """
    cell = 1.0 / cell_frequency
    band = 0.5 * cell if band is None else band
    rock_radius = 0.75 * cell if rock_radius is None else rock_radius
    parent_sdf = parent.sdf

    def rocks(p, parent_here):
        f1, f2, c1, c2 = F.voronoi_f1f2(p, seed, cell_frequency)
        a1 = np.abs(parent_sdf(c1)) <= band
        a2 = np.abs(parent_sdf(c2)) <= band
        half_gap = 0.5 * gap_width
        if gap_width > 0 and gap_noise > 0:
            half_gap = half_gap * (1.0 + gap_noise * F.perlin(p * (2.0 * cell_frequency), seed + 7))
        wall = 0.5 * (f2 - f1)
        inside = np.maximum(half_gap - wall, np.linalg.norm(p - c1, axis=1) - rock_radius)
        outside = np.where(a2, wall + half_gap, cell)
        rock = np.where(a1, inside, outside)
        return np.minimum(parent_here, rock)

    sdf = F.custom(rocks, parent_sdf, label="voronoi_rocks", frequency=cell_frequency, gap=gap_width, seed=seed)
    return TerrainElement(sdf, "voronoi_rocks", parent.bounds)


# --------------------------------------------------------------------------
# caves


CAVE_RULES = ("advance", "turn_yaw", "turn_pitch", "widen", "terminate")


@dataclass(frozen=True)
class CaveSystemSpec:
    """Stochastic L-system controls for a cave network.

    ``rule_weights`` weighs the non-fork productions; ``fork_probability``
    is the per-step chance of a fork.  ``tunnel_frequency`` is the inverse
    of the turtle step length.
    """

    rule_weights: dict = field(
        default_factory=lambda: {"advance": 4.0, "turn_yaw": 2.0, "turn_pitch": 1.0, "widen": 0.5, "terminate": 0.05}
    )
    cavern_size: float = 4.0
    tunnel_frequency: float = 0.5
    fork_probability: float = 0.08
    radius_range: tuple[float, float] = (0.8, 1.6)
    max_depth: int = 40
    entrance: tuple[float, float, float] = (0.0, 0.0, 0.0)
    heading: tuple[float, float] = (0.0, -0.2)  # yaw, pitch radians
    max_turn: float = math.radians(35)
    max_pitch: float = math.radians(30)
    seed: int = 0

    def __post_init__(self):
        w = self.rule_weights
        if any(k not in CAVE_RULES for k in w):
            raise ValueError(f"unknown cave rules {sorted(set(w) - set(CAVE_RULES))}")
        if any(v < 0 for v in w.values()) or sum(w.values()) <= 0:
            raise ValueError("rule weights must be >= 0 and not all zero")
        lo, hi = self.radius_range
        if not 0 < lo <= hi:
            raise ValueError("radius range must be positive")
        if not 0 <= self.fork_probability <= 1:
            raise ValueError("fork probability must lie in [0, 1]")
        if self.tunnel_frequency <= 0 or self.max_depth < 0:
            raise ValueError("tunnel frequency must be > 0 and max depth >= 0")


@dataclass(frozen=True, eq=False)
class Passage:
    points: np.ndarray  # (n, 3)
    radii: np.ndarray  # (n,)
    parent: int | None = None  # index of the passage this one forks from


def expand_cave_lsystem(spec: CaveSystemSpec) -> list[tuple]:
    """Derive the symbol string: ``max_depth`` rewrites of the axiom ``X``.

    Each rewrite replaces every ``X`` with one production:

    - fork: ``[ Y A X ] A X``
    - advance: ``A X``; turn_yaw: ``Y A X``; turn_pitch: ``P A X``;
      widen: ``W A X``; terminate: (empty)

    Parametric symbols carry their sampled angle / factor.  Leftover ``X``
    symbols are dropped, so each branch advances at most ``max_depth`` times.
    """
    r = rng(spec.seed, "cave", "rules")
    names = [k for k in CAVE_RULES if spec.rule_weights.get(k, 0) > 0]
    w = np.array([spec.rule_weights[k] for k in names], dtype=float)
    w /= w.sum()
    s: list[tuple] = [("X",)]
    for _ in range(spec.max_depth):
        out: list[tuple] = []
        for sym in s:
            if sym[0] != "X":
                out.append(sym)
                continue
            if r.random() < spec.fork_probability:
                turn = r.choice([-1.0, 1.0]) * r.uniform(0.5, 1.0) * spec.max_turn
                out += [("[",), ("Y", turn), ("A",), ("X",), ("]",), ("A",), ("X",)]
                continue
            rule = names[int(r.choice(len(names), p=w))]
            if rule == "terminate":
                continue
            if rule == "turn_yaw":
                out.append(("Y", r.uniform(-spec.max_turn, spec.max_turn)))
            elif rule == "turn_pitch":
                out.append(("P", r.uniform(-spec.max_pitch, spec.max_pitch)))
            elif rule == "widen":
                out.append(("W", r.uniform(1.1, 1.6)))
            out += [("A",), ("X",)]
        s = out
    return [sym for sym in s if sym[0] != "X"]


def generate_cave_skeleton(spec: CaveSystemSpec) -> list[Passage]:
    """Interpret the cave L-system with a 3D turtle.

    Returns one polyline per branch; forks start at their parent's current
    vertex, so the passages form a forest rooted at the entrance.
    """
    symbols = expand_cave_lsystem(spec)
    r = rng(spec.seed, "cave", "turtle")
    step = 1.0 / spec.tunnel_frequency
    lo, hi = spec.radius_range

    def state_direction(yaw, pitch):
        return np.array([math.cos(pitch) * math.cos(yaw), math.cos(pitch) * math.sin(yaw), math.sin(pitch)])

    start = np.asarray(spec.entrance, dtype=float)
    radius0 = r.uniform(lo, hi)
    passages: list[dict] = [{"pts": [start], "rad": [radius0], "parent": None}]
    stack = []
    cur = {"idx": 0, "pos": start, "yaw": spec.heading[0], "pitch": spec.heading[1], "rad": radius0}
    for sym in symbols:
        kind = sym[0]
        if kind == "A":
            d = state_direction(cur["yaw"], cur["pitch"])
            cur["pos"] = cur["pos"] + step * d
            # cross-sections relax back toward the sampled tunnel radius range
            cur["rad"] = float(np.clip(cur["rad"] * r.uniform(0.9, 1.05), lo, max(hi, spec.cavern_size)))
            passages[cur["idx"]]["pts"].append(cur["pos"])
            passages[cur["idx"]]["rad"].append(cur["rad"])
        elif kind == "Y":
            cur["yaw"] += sym[1]
        elif kind == "P":
            cur["pitch"] = float(np.clip(cur["pitch"] + sym[1], -spec.max_pitch, spec.max_pitch))
        elif kind == "W":
            cur["rad"] = min(spec.cavern_size, cur["rad"] * sym[1])
        elif kind == "[":
            stack.append(dict(cur))
            passages.append({"pts": [cur["pos"]], "rad": [cur["rad"]], "parent": cur["idx"]})
            cur = dict(cur, idx=len(passages) - 1, rad=r.uniform(lo, hi))
            passages[-1]["rad"][0] = cur["rad"]
        elif kind == "]":
            cur = stack.pop()
    return [
        Passage(np.array(p["pts"]), np.array(p["rad"]), p["parent"])
        for p in passages
        if len(p["pts"]) >= 2 or p["parent"] is None
    ]


def passage_segments(passages) -> tuple[np.ndarray, ...]:
    starts, ends, r0, r1 = [], [], [], []
    for p in passages:
        if len(p.points) == 1:
            starts.append(p.points[0])
            ends.append(p.points[0])
            r0.append(p.radii[0])
            r1.append(p.radii[0])
            continue
        starts.append(p.points[:-1])
        ends.append(p.points[1:])
        r0.append(p.radii[:-1])
        r1.append(p.radii[1:])
    return (
        np.vstack(starts).reshape(-1, 3),
        np.vstack(ends).reshape(-1, 3),
        np.concatenate([np.ravel(x) for x in r0]),
        np.concatenate([np.ravel(x) for x in r1]),
    )


def cave_tubes(passages) -> FieldProgram:
    s, e, r0, r1 = passage_segments(passages)
    return F.node("sdf_capsules", F.POSITION, starts=s, ends=e, r0=r0, r1=r1)


def carve_caves(base: TerrainElement, passages, influence: float = 2.0) -> TerrainElement:
    """Cut passages out of ``base`` (air is positive).

    Within ``influence`` metres of a tube wall the value is
    ``max(base, -tube)``; between ``influence`` and ``2 * influence`` it fades
    back to ``base``, which it equals exactly beyond that.  The fade only
    touches points where ``-tube < 0``, so the zero set (and every sign)
    matches the plain subtraction.
    """
    if not passages:
        return base
    if influence <= 0:
        raise ValueError("influence must be > 0")
    tube = cave_tubes(passages)
    cut = F.sdf_combine("subtract", base.sdf, tube)
    fade = F.node("map_range", tube, from_lo=float(influence), from_hi=2.0 * influence, clamp=True)
    blended = F.node("maximum", base.sdf, F.node("mix", cut, base.sdf, fade))
    return TerrainElement(blended, base.tag + "+caves", base.bounds)


# --------------------------------------------------------------------------
# tiled landscapes


@dataclass(frozen=True, eq=False)
class TileSpec:
    heights: np.ndarray  # (n, n) samples spanning [0, extent]^2 inclusive
    extent: float
    blend_margin: float = 0.0
    seed: int = 0

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=np.float64)
        if h.ndim != 2 or h.shape[0] != h.shape[1] or h.shape[0] < 1:
            raise ValueError("tile heightfield must be a non-empty square grid")
        if not 0 <= self.blend_margin < self.extent / 2:
            raise ValueError("blend margin must be < extent / 2")
        h = h.copy()
        h.setflags(write=False)
        object.__setattr__(self, "heights", h)


def make_tile(n: int, extent: float, noise: NoiseSpec, amplitude: float = 1.0, erosion_iterations: int = 0, **erosion) -> np.ndarray:
    """Primitive tile: fbm heightfield sampled on an ``n x n`` grid, optionally eroded."""
    xs = np.linspace(0.0, extent, n)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)
    h = amplitude * F.eval_noise(noise, pts).reshape(n, n)
    if erosion_iterations:
        h = thermal_erosion(h, extent / max(n - 1, 1), iterations=erosion_iterations, **erosion)
    return h


def thermal_erosion(heights: np.ndarray, cell: float, talus_angle: float = math.radians(35), iterations: int = 50, rate: float = 0.5) -> np.ndarray:
    """Talus-angle relaxation: material slides to lower 4-neighbours past the talus slope.

    Mass is conserved exactly (boundary cells exchange only with interior
    neighbours).
    """
    h = np.array(heights, dtype=np.float64)
    talus = math.tan(talus_angle) * cell
    for _ in range(iterations):
        delta = np.zeros_like(h)
        for axis in (0, 1):
            d = np.diff(h, axis=axis)  # h[i+1] - h[i]
            excess = np.abs(d) - talus
            move = np.where(excess > 0, 0.25 * rate * excess * np.sign(d), 0.0)
            # positive move: i+1 is higher, send material from i+1 to i
            lo = [slice(None)] * 2
            hi = [slice(None)] * 2
            lo[axis] = slice(None, -1)
            hi[axis] = slice(1, None)
            delta[tuple(lo)] += move
            delta[tuple(hi)] -= move
        h += delta
    return h


def _bilinear(grid: np.ndarray, extent: float, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    n = grid.shape[0]
    if n == 1:
        return np.full(u.shape, grid[0, 0])
    s = np.clip(u / extent, 0.0, 1.0) * (n - 1)
    t = np.clip(v / extent, 0.0, 1.0) * (n - 1)
    i = np.clip(np.floor(s).astype(np.int64), 0, n - 2)
    j = np.clip(np.floor(t).astype(np.int64), 0, n - 2)
    fs, ft = s - i, t - j
    return (
        grid[i, j] * (1 - fs) * (1 - ft)
        + grid[i + 1, j] * fs * (1 - ft)
        + grid[i, j + 1] * (1 - fs) * ft
        + grid[i + 1, j + 1] * fs * ft
    )


def tile_rotation(seed: int, ci, cj) -> np.ndarray:
    """Quarter-turn count for lattice cell ``(ci, cj)``."""
    return (hash_cells(seed, np.asarray(ci), np.asarray(cj)) & np.uint64(3)).astype(np.int64)


def tile_lookup(tile: TileSpec, ci, cj, x, y) -> np.ndarray:
    """Height of cell ``(ci, cj)``'s rotated tile at world ``(x, y)`` (edge-clamped)."""
    E = tile.extent
    u = x - ci * E - 0.5 * E
    v = y - cj * E - 0.5 * E
    rot = tile_rotation(tile.seed, ci, cj)
    # undo the cell's rotation: rotate (u, v) by -rot quarter turns
    ru = np.select([rot == 0, rot == 1, rot == 2, rot == 3], [u, v, -u, -v])
    rv = np.select([rot == 0, rot == 1, rot == 2, rot == 3], [v, -u, -v, u])
    return _bilinear(tile.heights, E, ru + 0.5 * E, rv + 0.5 * E)


def _axis_blend(x, E, m):
    i = np.floor(x / E).astype(np.int64)
    a = x - i * E
    i0 = i.copy()
    i1 = i.copy()
    t = np.zeros_like(x)
    if m > 0:
        left = a < m
        right = a > E - m
        i0 = np.where(left, i - 1, i0)
        i1 = np.where(right, i + 1, i1)
        s = np.where(left, (a + m) / (2 * m), np.where(right, (a - (E - m)) / (2 * m), 0.0))
        s = np.clip(s, 0.0, 1.0)
        t = s * s * (3 - 2 * s)
        t = np.where(left | right, t, 0.0)
    return i0, i1, t


def tiled_heights(tile: TileSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    E, m = tile.extent, tile.blend_margin
    i0, i1, tx = _axis_blend(x, E, m)
    j0, j1, ty = _axis_blend(y, E, m)
    out = np.zeros_like(x)
    for ci, wx in ((i0, 1 - tx), (i1, tx)):
        for cj, wy in ((j0, 1 - ty), (j1, ty)):
            w = wx * wy
            nz = w > 0
            if nz.any():
                out[nz] += w[nz] * tile_lookup(tile, ci[nz], cj[nz], x[nz], y[nz])
    return out


def tile_landscape(tile: TileSpec) -> TerrainElement:
    """Infinite landscape of quarter-turn-rotated copies of ``tile``.

    Heights cross-fade with a smoothstep over ``blend_margin`` on each side of
    every seam, which keeps the surface continuous.
    """

    def sdf(p):
        return p[:, 2] - tiled_heights(tile, p[:, 0], p[:, 1])

    return TerrainElement(F.custom(sdf, label="tiled_landscape", extent=tile.extent, seed=tile.seed), "tiled_landscape")


# --------------------------------------------------------------------------
# floating islands


def _smax(a, b, k):
    return -F._smin(-a, -b, k) if k > 0 else np.maximum(a, b)


def floating_island(
    center=(0.0, 0.0, 10.0),
    radius: float = 10.0,
    top_height: float = 3.0,
    bottom_depth: float = 8.0,
    noise: NoiseSpec | None = None,
    bottom_noise: NoiseSpec | None = None,
    noise_amount: float = 0.3,
    blend: float = 0.5,
    rim: float = 0.1,
) -> TerrainElement:
    """A mountain glued to an upside-down mountain.

    ``max(z - top(x, y), bottom(x, y) - z)`` with a smooth max; ``rim`` lifts
    both halves off the mid-plane so the solid vanishes beyond ``radius``.
    Using the same noise and heights for both halves gives a mirror-symmetric
    island.
    """
    cx, cy, z0 = map(float, center)
    noise = noise or NoiseSpec(frequency=0.15, octaves=3, seed=0)
    bottom_noise = bottom_noise or noise

    def profile(p, spec):
        r = np.hypot(p[:, 0] - cx, p[:, 1] - cy)
        base = np.clip(1.0 - r / radius, 0.0, None)
        flat = np.stack([p[:, 0], p[:, 1], np.zeros(len(p))], axis=1)
        n = F.eval_noise(spec, flat) / spec.amplitude_bound()
        return base * (1.0 + noise_amount * n)

    def sdf(p):
        top = z0 + top_height * profile(p, noise) - rim
        bottom = z0 - bottom_depth * profile(p, bottom_noise) + rim
        return _smax(p[:, 2] - top, bottom - p[:, 2], blend)

    grow = 1.0 + noise_amount
    bounds = (
        np.array([cx - radius, cy - radius, z0 - bottom_depth * grow]),
        np.array([cx + radius, cy + radius, z0 + top_height * grow]),
    )
    return TerrainElement(F.custom(sdf, label="floating_island"), "floating_island", bounds)


# --------------------------------------------------------------------------
# boulders


class BoulderError(RuntimeError):
    pass


@dataclass(frozen=True)
class BoulderParams:
    n_points: int = 32
    size: float = 1.0
    aspect: tuple[float, float, float] = (1.0, 0.85, 0.6)
    large_probability: float = 0.3
    large_distance: float = 0.35
    large_scale: float = 0.7
    small_probability: float = 0.25
    small_distance: float = 0.15
    small_scale: float = 0.6
    min_face_fraction: float = 0.5  # only faces with area >= this x median extrude
    subdivisions: int = 1
    displacement_low: float = 0.06
    displacement_high: float = 0.015
    voronoi_low: float = 1.5
    voronoi_high: float = 6.0


def _outward_hull(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hull = ConvexHull(points)
    verts_idx = np.unique(hull.simplices)
    remap = np.full(len(points), -1)
    remap[verts_idx] = np.arange(len(verts_idx))
    verts = points[verts_idx]
    faces = remap[hull.simplices]
    c = verts.mean(axis=0)
    tri = verts[faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = np.einsum("ij,ij->i", n, tri.mean(axis=1) - c) < 0
    faces[flip] = faces[flip][:, ::-1]
    return verts, faces


def extrude_faces(verts, faces, selected, distance, scale):
    """Extrude each selected face along its normal, shrinking the cap by ``scale``."""
    verts = list(verts)
    new_faces = []
    for fi, (a, b, c) in enumerate(faces):
        if not selected[fi]:
            new_faces.append((a, b, c))
            continue
        pa, pb, pc = verts[a], verts[b], verts[c]
        n = np.cross(pb - pa, pc - pa)
        area2 = np.linalg.norm(n)
        n = n / area2
        centroid = (pa + pb + pc) / 3.0
        lift = distance * math.sqrt(0.5 * area2)
        tops = []
        for p in (pa, pb, pc):
            verts.append(centroid + scale * (p - centroid) + lift * n)
            tops.append(len(verts) - 1)
        a2, b2, c2 = tops
        new_faces.append((a2, b2, c2))
        for u, v, u2, v2 in ((a, b, a2, b2), (b, c, b2, c2), (c, a, c2, a2)):
            new_faces.append((u, v, v2))
            new_faces.append((u, v2, u2))
    return np.array(verts), np.array(new_faces, dtype=np.int64)


def subdivide(verts: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint 1-to-4 split; shared edges get one shared midpoint."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    uniq, inv = np.unique(e, axis=0, return_inverse=True)
    mids = 0.5 * (verts[uniq[:, 0]] + verts[uniq[:, 1]])
    m = inv.reshape(3, -1).T + len(verts)  # midpoint ids of edges (01, 12, 20)
    a, b, c = faces.T
    ab, bc, ca = m.T
    new = np.concatenate(
        [np.stack([a, ab, ca], 1), np.stack([ab, b, bc], 1), np.stack([ca, bc, c], 1), np.stack([ab, bc, ca], 1)]
    )
    return np.vstack([verts, mids]), new


def generate_boulder(seed: int, params: BoulderParams = BoulderParams()) -> Mesh:
    """Convex hull, two levels of face extrusion, then Voronoi displacement."""
    if params.n_points < 4:
        raise ValueError("a boulder needs at least 4 hull points")
    for attempt in range(10):
        r = rng(seed, "boulder", attempt)
        d = r.normal(size=(params.n_points, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        pts = d * r.uniform(0.75, 1.0, size=(params.n_points, 1)) * np.asarray(params.aspect) * params.size
        try:
            verts, faces = _outward_hull(pts)
            break
        except QhullError:
            log.debug("degenerate boulder hull, seed %s attempt %d", seed, attempt)
    else:
        raise BoulderError(f"could not build a non-degenerate hull for seed {seed}")

    for prob, dist, scale in (
        (params.large_probability, params.large_distance, params.large_scale),
        (params.small_probability, params.small_distance, params.small_scale),
    ):
        if prob <= 0 or dist == 0:
            continue
        tri = verts[faces]
        area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
        big = area >= params.min_face_fraction * np.median(area)
        pick = big & (r.random(len(faces)) < prob)
        verts, faces = extrude_faces(verts, faces, pick, dist, scale)

    for _ in range(params.subdivisions):
        verts, faces = subdivide(verts, faces)

    mesh = Mesh(verts, faces)
    if params.displacement_low or params.displacement_high:
        normals = mesh.vertex_normals()
        s = r.integers(0, 2**31)
        lo = F.voronoi(verts, int(s), params.voronoi_low / params.size)[0] * params.voronoi_low / params.size
        hi = F.voronoi(verts, int(s) + 1, params.voronoi_high / params.size)[0] * params.voronoi_high / params.size
        disp = params.displacement_low * params.size * (lo - 0.5) + params.displacement_high * params.size * (hi - 0.5)
        mesh = Mesh(verts + normals * disp[:, None], faces)
    return mesh
