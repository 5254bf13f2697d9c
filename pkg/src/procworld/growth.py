"""Organic growth algorithms.

Skeleton growth (recursive paths, space colonization) and skinning for
trees and branching corals, differential growth for sheet corals,
reaction-diffusion and phase-field simulations for textured corals,
field transfer between meshes, and spiral sweeps for shells.  Every
generator is deterministic in its seed.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .mesh import Mesh
from .meshing import marching_cubes_grid
from .seeding import rng

log = logging.getLogger(__name__)


class GrowthError(RuntimeError):
    """A simulation became numerically unstable."""


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(n, 1e-300)


def _random_unit(r: np.random.Generator, n: int | None = None) -> np.ndarray:
    v = r.normal(size=(3,) if n is None else (n, 3))
    return _unit(v)


# --------------------------------------------------------------------------
# skeletons


@dataclass
class Skeleton:
    """A forest of nodes.  ``parents[i] < i`` or ``-1`` for a root."""

    positions: np.ndarray
    parents: np.ndarray
    levels: np.ndarray = None
    radii: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.parents = np.asarray(self.parents, dtype=np.int64).reshape(-1)
        n = len(self.positions)
        if len(self.parents) != n:
            raise ValueError("positions and parents differ in length")
        if self.levels is None:
            self.levels = np.zeros(n, np.int64)
        self.levels = np.asarray(self.levels, dtype=np.int64).reshape(-1)
        if n and np.any(self.parents >= np.arange(n)):
            raise ValueError("parent index must precede its child")
        if self.radii is not None:
            self.radii = np.asarray(self.radii, dtype=np.float64).reshape(-1)
            if np.any(self.radii <= 0):
                raise ValueError("radii must be positive")

    @classmethod
    def single(cls, position=(0.0, 0.0, 0.0)) -> "Skeleton":
        return cls(np.asarray(position, dtype=np.float64)[None], [-1])

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def roots(self) -> np.ndarray:
        return np.nonzero(self.parents < 0)[0]

    def children(self) -> list[list[int]]:
        out = [[] for _ in range(len(self))]
        for i, p in enumerate(self.parents):
            if p >= 0:
                out[p].append(i)
        return out

    def height(self) -> np.ndarray:
        """Edges on the longest downward path from each node to a leaf."""
        h = np.zeros(len(self), np.int64)
        for i in range(len(self) - 1, -1, -1):
            p = self.parents[i]
            if p >= 0:
                h[p] = max(h[p], h[i] + 1)
        return h

    def segments(self) -> np.ndarray:
        """``(E, 2)`` parent/child index pairs."""
        child = np.nonzero(self.parents >= 0)[0]
        return np.stack([self.parents[child], child], axis=1)

    def extend(self, positions, parents, levels) -> "Skeleton":
        return Skeleton(
            np.vstack([self.positions, np.asarray(positions, dtype=np.float64).reshape(-1, 3)]),
            np.concatenate([self.parents, np.asarray(parents, dtype=np.int64)]),
            np.concatenate([self.levels, np.asarray(levels, dtype=np.int64)]),
        )


@dataclass(frozen=True)
class GrowthConfig:
    momentum: float = 0.8
    randomness: float = 0.2
    pull_direction: tuple[float, float, float] = (0.0, 0.0, -1.0)
    pull_weight: float = 0.0
    step_length: float = 0.1
    path_nodes: int = 20
    initial_direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    root: tuple[float, float, float] = (0.0, 0.0, 0.0)
    branch_levels: int = 2
    branch_count: int = 4
    branch_start: float = 0.3
    branch_angle: float = 0.8
    length_decay: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if min(self.momentum, self.randomness, self.pull_weight) < 0:
            raise ValueError("growth weights must be non-negative")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum weight must lie in [0, 1]")
        if self.step_length <= 0:
            raise ValueError("step length must be positive")
        if self.path_nodes < 1 or self.branch_levels < 0 or self.branch_count < 0:
            raise ValueError("bad branching schedule")
        if not 0.0 <= self.branch_start <= 1.0:
            raise ValueError("branch_start is a fraction of the parent path")


def _tilt(direction: np.ndarray, angle: float, r: np.random.Generator) -> np.ndarray:
    """Rotate ``direction`` by ``angle`` towards a random perpendicular."""
    side = np.cross(direction, _random_unit(r))
    if np.linalg.norm(side) < 1e-9:
        side = np.cross(direction, [1.0, 0.0, 0.0])
        if np.linalg.norm(side) < 1e-9:
            side = np.cross(direction, [0.0, 1.0, 0.0])
    side = _unit(side)
    return _unit(math.cos(angle) * direction + math.sin(angle) * side)


def _grow_path(positions, parents, levels, start, direction, n, level, cfg, r):
    pull = _unit(np.asarray(cfg.pull_direction, dtype=np.float64)) if cfg.pull_weight else np.zeros(3)
    d = _unit(np.asarray(direction, dtype=np.float64))
    here = start
    path = []
    for _ in range(n):
        u = _random_unit(r) if cfg.randomness else np.zeros(3)
        step = cfg.momentum * d + cfg.randomness * u + cfg.pull_weight * pull
        if np.linalg.norm(step) > 1e-12:
            d = _unit(step)
        positions.append(positions[here] + cfg.step_length * d)
        parents.append(here)
        levels.append(level)
        here = len(positions) - 1
        path.append(here)
    return path


def recursive_paths(config: GrowthConfig) -> Skeleton:
    """Grow a branching skeleton from a single root.

    Each step adds a child to the current tip in direction
    ``normalize(momentum*d + randomness*u + pull_weight*pull)``.  Paths of
    level ``l < branch_levels`` spawn ``branch_count`` child paths at evenly
    spaced nodes past ``branch_start`` of their length.
    """
    r = rng(config.seed, "recursive_paths")
    positions = [np.asarray(config.root, dtype=np.float64)]
    parents = [-1]
    levels = [0]
    queue = [(0, np.asarray(config.initial_direction, dtype=np.float64), config.path_nodes, 0)]
    while queue:
        start, direction, n, level = queue.pop(0)
        path = _grow_path(positions, parents, levels, start, direction, n, level, config, r)
        if level >= config.branch_levels or config.branch_count == 0 or len(path) < 2:
            continue
        first = int(math.floor(config.branch_start * (len(path) - 1)))
        slots = np.linspace(first, len(path) - 1, config.branch_count + 1)[:-1]
        child_n = max(1, int(round(n * config.length_decay)))
        for s in np.round(slots).astype(int):
            node = path[s]
            along = positions[node] - positions[parents[node]]
            queue.append((node, _tilt(_unit(along), config.branch_angle, r), child_n, level + 1))
    return Skeleton(np.array(positions), np.array(parents), np.array(levels))


def attraction_points(shape: str, center, size: float, count: int, seed: int) -> np.ndarray:
    """Uniform attraction points in a ``cube``, ``ball`` or upright ``cone``."""
    r = rng(seed, "attraction", shape)
    c = np.asarray(center, dtype=np.float64)
    out = np.zeros((0, 3))
    while len(out) < count:
        p = r.uniform(-1.0, 1.0, size=(2 * count + 8, 3))
        if shape == "cube":
            keep = np.ones(len(p), bool)
        elif shape == "ball":
            keep = np.linalg.norm(p, axis=1) <= 1.0
        elif shape == "cone":
            keep = np.hypot(p[:, 0], p[:, 1]) <= 0.5 * (1.0 - p[:, 2])
        else:
            raise ValueError(f"unknown attraction shape {shape!r}")
        out = np.vstack([out, p[keep]])
    return c + size * out[:count]


def space_colonization(
    skeleton: Skeleton,
    points: np.ndarray,
    influence: float,
    kill: float,
    steps: int,
    step_length: float | None = None,
    return_points: bool = False,
):
    """Runions-style colonization for exactly ``steps`` iterations.

    Each live attraction point within ``influence`` of the skeleton pulls
    its nearest node; every pulled node grows one child of length
    ``step_length`` (default ``kill / 2``) along the mean unit direction of
    its attractors.  Points within ``kill`` of any node are then removed.
    With ``return_points`` the boolean mask of surviving points is returned too.
    """
    if not 0 < kill < influence:
        raise ValueError("need 0 < kill < influence")
    step = 0.5 * kill if step_length is None else float(step_length)
    if step <= 0:
        raise ValueError("step length must be positive")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    alive = np.ones(len(pts), bool)
    pos = skeleton.positions.copy()
    parents = list(skeleton.parents)
    levels = list(skeleton.levels)
    if len(pts):
        d, _ = cKDTree(pos).query(pts)
        alive &= d > kill
    for _ in range(steps):
        live = np.nonzero(alive)[0]
        if len(live) == 0:
            break
        tree = cKDTree(pos)
        d, near = tree.query(pts[live], distance_upper_bound=influence)
        ok = np.isfinite(d)
        if ok.any():
            src = near[ok]
            dirs = _unit(pts[live[ok]] - pos[src])
            acc = np.zeros((len(pos), 3))
            np.add.at(acc, src, dirs)
            grow = np.unique(src)
            g = acc[grow]
            norm = np.linalg.norm(g, axis=1)
            grow, g = grow[norm > 1e-9], g[norm > 1e-9] / norm[norm > 1e-9, None]
            new = pos[grow] + step * g
            pos = np.vstack([pos, new])
            parents.extend(grow.tolist())
            levels.extend((np.asarray(levels)[grow] + 1).tolist())
        d, _ = cKDTree(pos).query(pts[live])
        alive[live[d <= kill]] = False
    out = Skeleton(pos, parents, levels)
    return (out, alive) if return_points else out


def skeleton_radii(skeleton: Skeleton, leaf_radius: float, base: float) -> np.ndarray:
    """``leaf_radius * base ** height`` where height counts edges down to the furthest leaf."""
    if leaf_radius <= 0 or base <= 0:
        raise ValueError("leaf radius and base must be positive")
    return leaf_radius * np.power(float(base), skeleton.height().astype(np.float64))


def _chains(skeleton: Skeleton) -> list[list[int]]:
    """Split the forest into polylines, continuing along the tallest child."""
    kids = skeleton.children()
    h = skeleton.height()
    chains = []
    starts = [(int(r), None) for r in skeleton.roots]
    while starts:
        node, parent = starts.pop(0)
        chain = [] if parent is None else [parent]
        while True:
            chain.append(node)
            c = sorted(kids[node], key=lambda i: (-h[i], i))
            if not c:
                break
            starts.extend((int(o), node) for o in c[1:])
            node = c[0]
        chains.append(chain)
    return chains


def _frames(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parallel-transport frames (tangent, normal, binormal) along a polyline."""
    seg = _unit(np.diff(points, axis=0))
    t = np.empty_like(points)
    t[0], t[-1] = seg[0], seg[-1]
    if len(points) > 2:
        t[1:-1] = _unit(seg[:-1] + seg[1:])
        bad = np.linalg.norm(seg[:-1] + seg[1:], axis=1) < 1e-9
        t[1:-1][bad] = seg[1:][bad]
    n = np.empty_like(points)
    ref = np.array([0.0, 0.0, 1.0]) if abs(t[0, 2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    n[0] = _unit(ref - t[0] * (ref @ t[0]))
    for i in range(1, len(points)):
        m = n[i - 1] - t[i] * (n[i - 1] @ t[i])
        if np.linalg.norm(m) < 1e-9:
            ref = np.array([0.0, 0.0, 1.0]) if abs(t[i, 2]) < 0.9 else np.array([1.0, 0.0, 0.0])
            m = ref - t[i] * (ref @ t[i])
        n[i] = _unit(m)
    b = np.cross(t, n)
    return t, n, b


def tube(points: np.ndarray, radii: np.ndarray, sides: int, cap: bool = True) -> Mesh:
    """Closed generalized cylinder through ``points``; caps are triangle fans."""
    pts = np.asarray(points, dtype=np.float64)
    rad = np.broadcast_to(np.asarray(radii, dtype=np.float64), (len(pts),))
    t, n, b = _frames(pts)
    a = 2.0 * np.pi * np.arange(sides) / sides
    ring = np.cos(a)[None, :, None] * n[:, None, :] + np.sin(a)[None, :, None] * b[:, None, :]
    verts = (pts[:, None, :] + rad[:, None, None] * ring).reshape(-1, 3)
    k = len(pts)
    i, j = np.meshgrid(np.arange(k - 1), np.arange(sides), indexing="ij")
    v00 = i * sides + j
    v01 = i * sides + (j + 1) % sides
    v11 = (i + 1) * sides + (j + 1) % sides
    v10 = (i + 1) * sides + j
    faces = [np.stack([v00, v01, v11], -1).reshape(-1, 3), np.stack([v00, v11, v10], -1).reshape(-1, 3)]
    if cap:
        c0, c1 = len(verts), len(verts) + 1
        verts = np.vstack([verts, pts[0], pts[-1]])
        j = np.arange(sides)
        faces.append(np.stack([np.full(sides, c0), (j + 1) % sides, j], 1))
        last = (k - 1) * sides
        faces.append(np.stack([np.full(sides, c1), last + j, last + (j + 1) % sides], 1))
    return Mesh(verts, np.concatenate(faces))


def skin_skeleton(skeleton: Skeleton, leaf_radius: float = 0.01, base: float = 1.1, sides: int = 8) -> Mesh:
    """Sweep a capped tube along every branch chain of the skeleton.

    Radii follow ``leaf_radius * base ** height``, so they never increase
    from root to leaf when ``base >= 1``.  Each chain is its own closed
    tube; chains overlap at junctions instead of being welded.  Repeated
    positions along a chain are skipped with a warning.
    """
    if sides < 3:
        raise ValueError("a tube needs at least 3 sides")
    radii = skeleton.radii if skeleton.radii is not None else skeleton_radii(skeleton, leaf_radius, base)
    meshes = []
    for chain in _chains(skeleton):
        keep = [chain[0]]
        for node in chain[1:]:
            if np.linalg.norm(skeleton.positions[node] - skeleton.positions[keep[-1]]) <= 1e-12:
                log.warning("skipping zero-length skeleton edge at node %d", node)
                continue
            keep.append(node)
        if len(keep) < 2:
            continue
        meshes.append(tube(skeleton.positions[keep], radii[keep], sides))
    if not meshes:
        return Mesh.empty()
    offsets = np.cumsum([0] + [m.n_vertices for m in meshes[:-1]])
    return Mesh(
        np.concatenate([m.vertices for m in meshes]),
        np.concatenate([m.faces + o for m, o in zip(meshes, offsets)]),
    )


# --------------------------------------------------------------------------
# differential growth


@dataclass(frozen=True)
class DifferentialGrowthParams:
    attraction: float = 0.5
    repulsion: float = 0.5
    growth: float = 0.1
    noise: float = 0.1
    growth_direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    split_length: float = 0.1
    max_faces: int = 1000
    step_size: float = 0.25
    boundary_weight: float = 1.0
    seed_segments: int = 12
    max_iterations: int = 2000
    seed: int = 0

    def __post_init__(self):
        if min(self.attraction, self.repulsion, self.growth, self.noise) < 0:
            raise ValueError("force weights must be non-negative")
        if self.split_length <= 0 or self.step_size <= 0:
            raise ValueError("split length and step size must be positive")
        if self.seed_segments < 3:
            raise ValueError("seed circle needs at least 3 segments")
        if self.max_faces <= self.seed_segments:
            raise ValueError("max_faces must exceed the seed face count")


LEATHER_CORAL = DifferentialGrowthParams(
    attraction=0.3, repulsion=0.5, growth=0.4, noise=0.6, max_faces=1000, seed_segments=12
)
TABLE_CORAL = DifferentialGrowthParams(
    attraction=0.3, repulsion=1.2, growth=0.1, noise=0.2, max_faces=400, boundary_weight=0.3, seed_segments=12
)


def seed_disk(segments: int, radius: float) -> Mesh:
    """Fan-triangulated disk in the xy-plane: a centre vertex plus a ring."""
    a = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(a), radius * np.sin(a), np.zeros(segments)], 1)
    verts = np.vstack([[0.0, 0.0, 0.0], ring])
    j = np.arange(segments)
    faces = np.stack([np.zeros(segments, np.int64), 1 + j, 1 + (j + 1) % segments], 1)
    return Mesh(verts, faces)


def _split_long_edges(verts: np.ndarray, faces: np.ndarray, limit: float) -> tuple[np.ndarray, np.ndarray]:
    verts = list(verts)
    faces = faces.copy()
    while True:
        e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        e.sort(axis=1)
        e = np.unique(e, axis=0)
        v = np.asarray(verts)
        length = np.linalg.norm(v[e[:, 0]] - v[e[:, 1]], axis=1)
        long = np.argsort(-length, kind="stable")
        long = long[length[long] > limit]
        if len(long) == 0:
            return v, faces
        touched = np.zeros(len(v), bool)
        added = []
        for a, b in e[long]:
            if touched[a] or touched[b]:
                continue  # neighbours of a fresh split wait for the next sweep
            m = len(verts)
            verts.append(0.5 * (v[a] + v[b]))
            has = ((faces == a) | (faces == b)).sum(axis=1) == 2
            for fi in np.nonzero(has)[0]:
                k = int(np.nonzero((faces[fi] != a) & (faces[fi] != b))[0][0])
                o, x, y = np.roll(faces[fi], -k)  # edge x -> y keeps its winding
                faces[fi] = (o, x, m)
                added.append((o, m, y))
            touched[[a, b]] = True
        faces = np.vstack([faces, np.asarray(added, dtype=np.int64).reshape(-1, 3)])


def differential_growth(params: DifferentialGrowthParams = LEATHER_CORAL, mesh: Mesh | None = None) -> Mesh:
    """Grow a sheet by neighbour attraction, local repulsion, drift and noise.

    Attraction pulls each vertex toward its neighbour mean.  Repulsion acts
    between vertices closer than three split lengths and, like the drift
    and noise terms, is measured in split lengths.

    Displacement is ``step_size * force`` clamped to a quarter of the split
    length, so one sweep of midpoint splits keeps every edge at or below
    ``split_length``.  Stops once the face count reaches ``max_faces`` or
    after ``max_iterations``.  Raises :class:`GrowthError` when a raw
    displacement is non-finite or longer than ten split lengths.
    """
    p = params
    split = p.split_length
    if mesh is None:
        mesh = seed_disk(p.seed_segments, 0.45 * split / math.sin(math.pi / p.seed_segments))
    verts, faces = mesh.vertices.copy(), mesh.faces.copy()
    if not (p.attraction or p.repulsion or p.growth or p.noise):
        return Mesh(verts, faces)
    r = rng(p.seed, "differential_growth")
    g = np.asarray(p.growth_direction, dtype=np.float64)
    cutoff = 3.0 * split
    burst = 0
    it = 0
    for it in range(p.max_iterations):
        if len(faces) >= p.max_faces:
            break
        n = len(verts)
        e = Mesh(verts, faces).edges()
        adj = sp.coo_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n)).tocsr()
        deg = np.asarray(adj.sum(axis=1)).ravel()
        force = p.attraction * (adj @ verts / np.maximum(deg, 1)[:, None] - verts)
        if p.repulsion:
            pairs = cKDTree(verts).query_pairs(cutoff, output_type="ndarray")
            if len(pairs):
                d = verts[pairs[:, 0]] - verts[pairs[:, 1]]
                dist = np.maximum(np.linalg.norm(d, axis=1), 1e-12)
                push = (d / dist[:, None]) * (1.0 - dist / cutoff)[:, None] * (p.repulsion * split)
                np.add.at(force, pairs[:, 0], push)
                np.add.at(force, pairs[:, 1], -push)
        force += (p.growth * split) * g
        if p.noise:
            force += (p.noise * split) * r.normal(size=(n, 3))
        delta = p.step_size * force
        size = np.linalg.norm(delta, axis=1)
        if not np.all(np.isfinite(delta)) or size.max() > 10.0 * split:
            raise GrowthError(f"differential growth diverged at iteration {it}: max step {size.max():.3g}")
        cap = 0.25 * split
        delta *= np.minimum(1.0, cap / np.maximum(size, 1e-300))[:, None]
        if p.boundary_weight != 1.0:
            bnd = np.unique(Mesh(verts, faces).boundary_edges())
            delta[bnd] *= p.boundary_weight
        verts = verts + delta
        before = len(faces)
        verts, faces = _split_long_edges(verts, faces, split)
        burst = len(faces) - before
    return Mesh(verts, faces, attributes={"iterations": it, "last_burst": burst})


# --------------------------------------------------------------------------
# reaction-diffusion


@dataclass
class ReactionDiffusionState:
    """Gray-Scott fields on a graph.  ``adjacency`` is a symmetric 0/1 matrix."""

    adjacency: sp.csr_matrix
    A: np.ndarray
    B: np.ndarray
    f: float
    k: float
    r_a: float = 0.8
    r_b: float = 0.4
    dt: float = 1.0

    def __post_init__(self):
        self.adjacency = sp.csr_matrix(self.adjacency, dtype=np.float64)
        self.A = np.asarray(self.A, dtype=np.float64).copy()
        self.B = np.asarray(self.B, dtype=np.float64).copy()
        n = self.adjacency.shape[0]
        if self.A.shape != (n,) or self.B.shape != (n,):
            raise ValueError("field length must match vertex count")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.B))):
            raise ValueError("fields must be finite")
        if self.dt <= 0 or self.dt > 1.0:
            raise ValueError("dt must lie in (0, 1] with the normalized Laplacian")

    @property
    def degree(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    def laplacian(self, x: np.ndarray) -> np.ndarray:
        """Uniform normalized graph Laplacian: neighbour mean minus self."""
        deg = self.degree
        return np.where(deg > 0, (self.adjacency @ x) / np.maximum(deg, 1), x) - x

    @classmethod
    def torus(cls, n: int, f: float, k: float, seed: int = 0, perturb: bool = True, **kw) -> "ReactionDiffusionState":
        """``n x n`` periodic grid with 4-neighbour connectivity.

        With ``perturb`` a central square of side ``n // 4`` is set to
        ``A=0.5, B=0.25`` and small uniform noise is added everywhere.
        """
        idx = np.arange(n * n).reshape(n, n)
        right = np.stack([idx.ravel(), np.roll(idx, -1, axis=1).ravel()], 1)
        down = np.stack([idx.ravel(), np.roll(idx, -1, axis=0).ravel()], 1)
        adj = _adjacency(np.vstack([right, down]), n * n)
        A, B = np.ones(n * n), np.zeros(n * n)
        if perturb:
            s = max(1, n // 4)
            lo = n // 2 - s // 2
            sq = np.zeros((n, n), bool)
            sq[lo : lo + s, lo : lo + s] = True
            A[sq.ravel()], B[sq.ravel()] = 0.5, 0.25
            r = rng(seed, "gray_scott", "torus")
            A += 0.02 * r.random(n * n)
            B += 0.02 * r.random(n * n)
        return cls(adj, A, B, f, k, **kw)

    @classmethod
    def on_mesh(
        cls, mesh: Mesh, f: float, k: float, seed: int = 0, spots: int = 8, spot_fraction: float = 0.02, **kw
    ) -> "ReactionDiffusionState":
        """Fields on mesh vertices, edges as graph edges, seeded with random spots."""
        n = mesh.n_vertices
        adj = _adjacency(mesh.edges(), n)
        A, B = np.ones(n), np.zeros(n)
        if spots:
            r = rng(seed, "gray_scott", "mesh")
            centres = r.choice(n, size=min(spots, n), replace=False)
            per = max(1, int(spot_fraction * n))
            _, near = cKDTree(mesh.vertices).query(mesh.vertices[centres], k=min(per, n))
            near = np.atleast_2d(near).ravel()
            A[near], B[near] = 0.5, 0.25
            A += 0.02 * r.random(n)
            B += 0.02 * r.random(n)
        return cls(adj, A, B, f, k, **kw)


def _adjacency(edges: np.ndarray, n: int) -> sp.csr_matrix:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    e = e[e[:, 0] != e[:, 1]]
    m = sp.coo_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n)).tocsr()
    m.data[:] = 1.0  # collapse duplicate edges
    return m


def brain_feed(k: float) -> float:
    """Feed rate on the saddle-node boundary, ``sqrt(k)/2 - k``."""
    return math.sqrt(k) / 2.0 - k


def honeycomb_feed(k: float) -> float:
    """Feed rate just inside the saddle-node boundary."""
    return brain_feed(k) - 0.001


def gray_scott(state: ReactionDiffusionState, steps: int) -> np.ndarray:
    """Forward-Euler Gray-Scott for ``steps`` iterations; updates ``state`` in place.

    ``A' = r_a L(A) - A B^2 + f (1 - A)`` and
    ``B' = r_b L(B) + A B^2 - (f + k) B``, both clamped to ``[0, 1.5]``.
    Returns a copy of the final ``A``.
    """
    A, B = state.A, state.B
    dt = state.dt
    for i in range(steps):
        ab2 = A * B * B
        dA = state.r_a * state.laplacian(A) - ab2 + state.f * (1.0 - A)
        dB = state.r_b * state.laplacian(B) + ab2 - (state.f + state.k) * B
        A = A + dt * dA
        B = B + dt * dB
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise GrowthError(f"gray-scott produced non-finite values at step {i}")
        np.clip(A, 0.0, 1.5, out=A)
        np.clip(B, 0.0, 1.5, out=B)
    state.A, state.B = A, B
    return A.copy()


# --------------------------------------------------------------------------
# phase field


@dataclass
class PhaseFieldState:
    """Dendritic solidification on a regular grid (phase ``A``, temperature ``B``)."""

    A: np.ndarray
    B: np.ndarray
    alpha: float = 0.9
    gamma: float = 10.0
    tau: float = 3e-4
    epsilon: float = 0.01
    kappa: float = 1.8
    t_eq: float = 1.0
    spacing: float = 0.03
    dt: float | None = None
    noise: float = 0.0
    seed: int = 0
    step_index: int = 0

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64).copy()
        self.B = np.asarray(self.B, dtype=np.float64).copy()
        if self.A.ndim != 3 or self.A.shape != self.B.shape:
            raise ValueError("A and B must be matching 3D grids")
        if self.tau <= 0 or self.spacing <= 0:
            raise ValueError("tau and spacing must be positive")
        if self.dt is None:
            self.dt = stable_phase_dt(self.spacing, self.epsilon, self.tau)

    @classmethod
    def nucleus(cls, n: int, radius_cells: float, **kw) -> "PhaseFieldState":
        """``n^3`` grid, undercooled (``B=0``), with a solid ball at the centre."""
        if n < 8:
            raise ValueError("phase-field grid must be at least 8 cells per axis")
        c = (n - 1) / 2.0
        i = np.indices((n, n, n)).astype(np.float64)
        d = np.sqrt(((i - c) ** 2).sum(axis=0))
        A = (d <= radius_cells).astype(np.float64)
        return cls(A, np.zeros_like(A), **kw)


def stable_phase_dt(spacing: float, epsilon: float, tau: float) -> float:
    """Explicit step inside the 3D diffusion limit of both equations."""
    return 0.15 * spacing**2 * min(1.0, tau / max(epsilon**2, 1e-300))


def _laplace3(x: np.ndarray, h: float) -> np.ndarray:
    p = np.pad(x, 1, mode="edge")  # zero-flux walls
    return (
        p[2:, 1:-1, 1:-1] + p[:-2, 1:-1, 1:-1] + p[1:-1, 2:, 1:-1] + p[1:-1, :-2, 1:-1]
        + p[1:-1, 1:-1, 2:] + p[1:-1, 1:-1, :-2] - 6.0 * x
    ) / (h * h)


def phase_field_step(state: PhaseFieldState) -> PhaseFieldState:
    """One forward-Euler step, in place.

    ``m = alpha * arctan(gamma (t_eq - B)) / pi``,
    ``tau dA/dt = eps^2 lap A + A (1 - A)(A - 1/2 + m)``,
    ``dB/dt = lap B + kappa dA/dt``.  ``A`` is clamped to ``[-0.1, 1.1]``.
    """
    s = state
    A, B = s.A, s.B
    m = s.alpha * np.arctan(s.gamma * (s.t_eq - B)) / np.pi
    react = A * (1.0 - A) * (A - 0.5 + m)
    if s.noise:
        chi = rng(s.seed, "phase_noise", s.step_index).random(A.shape)
        react = react + s.noise * A * (1.0 - A) * (chi - 0.5)
    dA = (s.epsilon**2 * _laplace3(A, s.spacing) + react) / s.tau
    newA = A + s.dt * dA
    newB = B + s.dt * (_laplace3(B, s.spacing) + s.kappa * dA)
    if not (np.all(np.isfinite(newA)) and np.all(np.isfinite(newB))):
        raise GrowthError(f"phase field produced non-finite values at step {s.step_index}")
    s.A = np.clip(newA, -0.1, 1.1)
    s.B = newB
    s.step_index += 1
    return s


def dendritic_growth(state: PhaseFieldState, steps: int = 800, mesh: bool = True):
    """Run ``steps`` phase-field iterations; returns ``(A, mesh of A = 0.5)``."""
    for _ in range(steps):
        phase_field_step(state)
    if not mesh:
        return state.A.copy(), None
    pad = np.pad(state.A, 1, constant_values=0.0)  # close the surface at the walls
    surf = marching_cubes_grid(0.5 - pad, origin=-state.spacing * np.ones(3), spacing=state.spacing)
    return state.A.copy(), surf


def sphericity(mesh: Mesh) -> float:
    """``pi^(1/3) (6V)^(2/3) / area``; 1 for a sphere."""
    area = mesh.face_areas().sum()
    vol = abs(mesh.signed_volume())
    return float(np.pi ** (1 / 3) * (6 * vol) ** (2 / 3) / area) if area > 0 else 0.0


# --------------------------------------------------------------------------
# shrinkwrap


def closest_point_on_triangles(p, a, b, c) -> tuple[np.ndarray, np.ndarray]:
    """Closest points and barycentric weights, row-wise over ``(N, 3)`` inputs."""
    ab, ac, ap = b - a, c - a, p - a
    bp, cp = p - b, p - c
    dot = lambda x, y: np.einsum("ij,ij->i", x, y)  # noqa: E731
    d1, d2 = dot(ab, ap), dot(ac, ap)
    d3, d4 = dot(ab, bp), dot(ac, bp)
    d5, d6 = dot(ab, cp), dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    w = np.empty((len(p), 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        den = va + vb + vc
        v_in, w_in = vb / den, vc / den
        w[:] = np.stack([1 - v_in - w_in, v_in, w_in], 1)
        # lower-priority regions first so the vertex regions win
        r = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        w[r] = np.stack([np.zeros(r.sum()), 1 - t[r], t[r]], 1)
        r = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = d2 / (d2 - d6)
        w[r] = np.stack([1 - t[r], np.zeros(r.sum()), t[r]], 1)
        r = (d6 >= 0) & (d5 <= d6)
        w[r] = (0.0, 0.0, 1.0)
        r = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = d1 / (d1 - d3)
        w[r] = np.stack([1 - t[r], t[r], np.zeros(r.sum())], 1)
        r = (d3 >= 0) & (d4 <= d3)
        w[r] = (0.0, 1.0, 0.0)
        r = (d1 <= 0) & (d2 <= 0)
        w[r] = (1.0, 0.0, 0.0)
    w[~np.all(np.isfinite(w), axis=1)] = (1.0, 0.0, 0.0)  # degenerate triangle
    q = w[:, :1] * a + w[:, 1:2] * b + w[:, 2:] * c
    return q, w


def nearest_on_mesh(mesh: Mesh, points: np.ndarray, k: int = 16):
    """Exact nearest surface point: ``(face, barycentrics, distance)`` per query."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tri = mesh.vertices[mesh.faces]
    cen = tri.mean(axis=1)
    reach = np.linalg.norm(tri - cen[:, None], axis=2).max()
    tree = cKDTree(cen)
    F = len(cen)
    face = np.zeros(len(pts), np.int64)
    bary = np.zeros((len(pts), 3))
    dist = np.full(len(pts), np.inf)
    todo = np.arange(len(pts))
    k = min(k, F)
    while len(todo):
        dc, cand = tree.query(pts[todo], k=k)
        dc, cand = dc.reshape(len(todo), k), cand.reshape(len(todo), k)
        rep = np.repeat(todo, k)
        c = cand.ravel()
        q, w = closest_point_on_triangles(pts[rep], tri[c, 0], tri[c, 1], tri[c, 2])
        d = np.linalg.norm(q - pts[rep], axis=1).reshape(len(todo), k)
        best = np.argmin(d, axis=1)
        rows = np.arange(len(todo))
        face[todo] = cand[rows, best]
        bary[todo] = w.reshape(len(todo), k, 3)[rows, best]
        dist[todo] = d[rows, best]
        if k >= F:
            break
        done = dist[todo] <= dc[:, -1] - reach
        todo = todo[~done]
        k = min(4 * k, F)
    return face, bary, dist


def _raycast(mesh: Mesh, origins: np.ndarray, dirs: np.ndarray, chunk: int = 1 << 20):
    """Nearest hit (either direction) along each line: ``(face, barycentrics, |t|)``."""
    tri = mesh.vertices[mesh.faces]
    e1, e2 = tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    n, F = len(origins), len(tri)
    face = np.full(n, -1, np.int64)
    bary = np.zeros((n, 3))
    best = np.full(n, np.inf)
    rows = max(1, chunk // max(F, 1))
    for s in range(0, n, rows):
        o, d = origins[s : s + rows, None, :], dirs[s : s + rows, None, :]
        pv = np.cross(d, e2[None])
        det = np.einsum("ijk,ijk->ij", pv, np.broadcast_to(e1[None], pv.shape))
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            tv = o - tri[None, :, 0]
            u = np.einsum("ijk,ijk->ij", tv, pv) * inv
            qv = np.cross(tv, e1[None])
            v = np.einsum("ijk,ijk->ij", np.broadcast_to(d, qv.shape), qv) * inv
            t = np.einsum("ijk,ijk->ij", qv, np.broadcast_to(e2[None], qv.shape)) * inv
            ok = (np.abs(det) > 1e-14) & (u >= 0) & (v >= 0) & (u + v <= 1)
        at = np.where(ok, np.abs(t), np.inf)
        j = np.argmin(at, axis=1)
        r = np.arange(len(j))
        hit = np.isfinite(at[r, j])
        idx = s + r[hit]
        face[idx] = j[hit]
        best[idx] = at[r, j][hit]
        uu, vv = u[r, j][hit], v[r, j][hit]
        bary[idx] = np.stack([1 - uu - vv, uu, vv], 1)
    return face, bary, best


def shrinkwrap_project(
    source: Mesh,
    values: np.ndarray,
    target: Mesh,
    mode: str = "nearest",
    max_distance: float = np.inf,
) -> tuple[np.ndarray, np.ndarray]:
    """Transfer a per-vertex field from ``source`` onto ``target`` vertices.

    ``nearest`` projects each target vertex to the closest source surface
    point; ``normal`` casts a line along the target vertex normal.  The
    field is interpolated barycentrically.  Returns ``(values, valid)``;
    vertices with no projection within ``max_distance`` get NaN and
    ``valid = False``.
    """
    vals = np.asarray(values, dtype=np.float64).reshape(-1)
    if len(vals) != source.n_vertices:
        raise ValueError("one source value per source vertex is required")
    if source.is_empty():
        return np.full(target.n_vertices, np.nan), np.zeros(target.n_vertices, bool)
    if mode == "nearest":
        face, bary, dist = nearest_on_mesh(source, target.vertices)
    elif mode == "normal":
        face, bary, dist = _raycast(source, target.vertices, target.vertex_normals())
    else:
        raise ValueError(f"unknown shrinkwrap mode {mode!r}")
    valid = (face >= 0) & (dist <= max_distance)
    out = np.full(target.n_vertices, np.nan)
    f = source.faces[face[valid]]
    out[valid] = (bary[valid] * vals[f]).sum(axis=1)
    return out, valid


# --------------------------------------------------------------------------
# spiral sweep


def shell_section(
    n: int = 32, radius: float = 1.0, aspect: float = 1.0, spikes: int = 0, spike_amount: float = 0.0
) -> np.ndarray:
    """Closed 2D cross-section: an ellipse blended with a star of ``spikes`` points."""
    a = 2.0 * np.pi * np.arange(n) / n
    r = radius * (1.0 + spike_amount * np.maximum(np.cos(spikes * a), 0.0) ** 4) if spikes else np.full(n, radius)
    return np.stack([r * np.cos(a), aspect * r * np.sin(a)], 1)


@dataclass(frozen=True)
class SpiralParams:
    section: tuple = None  # (K, 2) polygon, filled by shell_section when None
    angle: float = math.radians(30.0)
    ratio: float = 0.97
    axial: float = 0.05
    lateral: float = 0.3
    loops: int = 36
    offset: float = 1.2
    cap: bool = False


def spiral_rings(params: SpiralParams) -> np.ndarray:
    """Ring vertices ``(loops + 1, K, 3)``; ring ``i`` is the ``i``-fold similarity.

    The section lies in the xz-plane at ``x = offset``.  One step rotates
    about +z by ``angle``, scales about the origin by ``ratio`` and then
    translates by ``(lateral, 0, axial)``.
    """
    p = params
    sec = np.asarray(p.section if p.section is not None else shell_section(), dtype=np.float64)
    if not 0.0 < p.ratio <= 1.0:
        raise ValueError("scale ratio must lie in (0, 1]")
    if p.loops < 1 or len(sec) < 3:
        raise ValueError("need at least one loop and a polygon of 3 or more points")
    ring = np.stack([p.offset + sec[:, 0], np.zeros(len(sec)), sec[:, 1]], 1)
    c, s = math.cos(p.angle), math.sin(p.angle)
    R = p.ratio * np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    d = np.array([p.lateral, 0.0, p.axial])
    rings = [ring]
    for _ in range(p.loops):
        ring = ring @ R.T + d
        rings.append(ring)
    return np.stack(rings)


def spiral_sweep(params: SpiralParams) -> Mesh:
    """Bridge consecutive spiral rings into a tube; overlapping whorls are allowed."""
    rings = spiral_rings(params)
    L, K, _ = rings.shape
    verts = rings.reshape(-1, 3)
    i, j = np.meshgrid(np.arange(L - 1), np.arange(K), indexing="ij")
    a = i * K + j
    b = i * K + (j + 1) % K
    c = (i + 1) * K + (j + 1) % K
    d = (i + 1) * K + j
    faces = [np.stack([a, c, b], -1).reshape(-1, 3), np.stack([a, d, c], -1).reshape(-1, 3)]
    if params.cap:
        c0, c1 = len(verts), len(verts) + 1
        verts = np.vstack([verts, rings[0].mean(axis=0), rings[-1].mean(axis=0)])
        jj = np.arange(K)
        faces.append(np.stack([np.full(K, c0), jj, (jj + 1) % K], 1))
        last = (L - 1) * K
        faces.append(np.stack([np.full(K, c1), last + (jj + 1) % K, last + jj], 1))
    mesh = Mesh(verts, np.concatenate(faces))
    if params.cap and mesh.signed_volume() < 0:
        mesh = Mesh(mesh.vertices, mesh.faces[:, ::-1])
    return mesh


SHELLS = {
    "conch": SpiralParams(
        section=tuple(map(tuple, shell_section(32, 1.0, 0.8, spikes=7, spike_amount=0.35))),
        angle=math.radians(25), ratio=0.97, axial=0.12, lateral=0.15, loops=48, offset=1.0,
    ),
    "auger": SpiralParams(
        section=tuple(map(tuple, shell_section(24, 1.0, 1.2))),
        angle=math.radians(30), ratio=0.985, axial=0.16, lateral=0.1, loops=96, offset=0.6,
    ),
    "volute": SpiralParams(
        section=tuple(map(tuple, shell_section(32, 1.0, 1.4, spikes=5, spike_amount=0.15))),
        angle=math.radians(24), ratio=0.975, axial=0.02, lateral=0.2, loops=60, offset=1.0,
    ),
    "nautilus": SpiralParams(
        section=tuple(map(tuple, shell_section(32, 1.0, 1.1))),
        angle=math.radians(20), ratio=0.955, axial=0.0, lateral=0.12, loops=54, offset=1.1,
    ),
}


# --------------------------------------------------------------------------
# preset files


def preset_names() -> list[str]:
    folder = resources.files("procworld") / "presets" / "growth"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    """Read a growth preset by name (``leather_coral``, ``conch``, ``pine``, ...)."""
    path = resources.files("procworld") / "presets" / "growth" / f"{name}.json"
    if not path.is_file():
        raise KeyError(f"no growth preset named {name!r}; known: {', '.join(preset_names())}")
    return json.loads(path.read_text())


def build_preset(name: str, seed: int = 0):
    """Instantiate a preset; returns the natural output of its generator."""
    doc = load_preset(name)
    kind, params = doc["generator"], dict(doc["params"])
    if kind == "differential_growth":
        return differential_growth(DifferentialGrowthParams(seed=seed, **params))
    if kind == "gray_scott":
        k = params.pop("k")
        f = brain_feed(k) + params.pop("feed_offset", 0.0)
        n = params.pop("grid", 64)
        steps = params.pop("steps", 1000)
        state = ReactionDiffusionState.torus(n, f, k, seed=seed, **params)
        return gray_scott(state, steps).reshape(n, n)
    if kind == "dendritic_growth":
        n = params.pop("grid")
        radius = params.pop("nucleus_cells")
        steps = params.pop("steps", 800)
        state = PhaseFieldState.nucleus(n, radius, seed=seed, **params)
        return dendritic_growth(state, steps)
    if kind == "recursive_paths":
        colonize = params.pop("colonization", None)
        skel = recursive_paths(GrowthConfig(seed=seed, **{k: tuple(v) if isinstance(v, list) else v for k, v in params.items()}))
        if colonize:
            pts = attraction_points(
                colonize["shape"], colonize["center"], colonize["size"], colonize["count"], seed
            )
            skel = space_colonization(skel, pts, colonize["influence"], colonize["kill"], colonize["steps"])
        return skel
    if kind == "spiral_sweep":
        base = SHELLS[params.pop("shape")]
        return spiral_sweep(replace(base, **params))
    raise ValueError(f"unknown generator {kind!r} in preset {name!r}")
