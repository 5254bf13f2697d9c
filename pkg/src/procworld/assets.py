"""Instantiate placeholder assets as meshes.

A mesh depends only on ``(kind, seed)`` plus the placeholder transform, so
camera choices never change asset geometry.  Every generator output is
normalised to a unit footprint (horizontal radius 1, base on z = 0) and then
scaled by the placeholder's footprint radius.
"""

from __future__ import annotations

from dataclasses import replace
from functools import lru_cache

import numpy as np

from . import growth as G
from .mesh import Mesh
from .scene import Placeholder
from .seeding import substream
from .terrain import BoulderParams, generate_boulder, subdivide


def icosphere(levels: int = 3) -> Mesh:
    t = (1 + 5**0.5) / 2
    v = np.array(
        [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]],
        dtype=np.float64,
    )
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4], [11, 10, 2],
         [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9], [4, 9, 5],
         [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]],
        dtype=np.int64,
    )
    for _ in range(levels):
        v, f = subdivide(v, f)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return Mesh(v, f)


def normalize(mesh: Mesh) -> Mesh:
    """Centre on the xy origin, rest the lowest point on z = 0, unit horizontal radius."""
    if mesh.is_empty():
        return mesh
    v = mesh.vertices.copy()
    v[:, :2] -= 0.5 * (v[:, :2].min(axis=0) + v[:, :2].max(axis=0))
    v[:, 2] -= v[:, 2].min()
    radius = np.linalg.norm(v[:, :2], axis=1).max()
    if radius > 0:
        v /= radius
    return Mesh(v, mesh.faces)


def _skinned(preset: str, seed: int, leaf: float, base: float) -> Mesh:
    return G.skin_skeleton(G.build_preset(preset, seed), leaf_radius=leaf, base=base, sides=6)


def _brain(seed: int) -> Mesh:
    source = icosphere(3)
    k = 0.0625
    # small spots decay to the homogeneous state on a mesh this coarse
    state = G.ReactionDiffusionState.on_mesh(source, G.brain_feed(k), k, seed=seed, spot_fraction=0.05)
    a = G.gray_scott(state, 600)
    target = icosphere(4)
    values, valid = G.shrinkwrap_project(source, a, target)
    values = np.where(valid, values, 1.0)
    v = target.vertices * (1.0 + 0.08 * (1.0 - values))[:, None]
    v[:, 2] *= 0.6
    return Mesh(v, target.faces)


def _cauliflower(seed: int) -> Mesh:
    state = G.PhaseFieldState.nucleus(24, 3, seed=seed, noise=0.02, spacing=0.03)
    _, mesh = G.dendritic_growth(state, 400)
    return mesh


def _shell(name: str, seed: int) -> Mesh:
    base = G.SHELLS[name]
    # small per-seed variation in the whorl rate keeps instances distinct
    jitter = 1.0 + 0.05 * ((substream(seed, "shell") % 1000) / 1000.0 - 0.5)
    return G.spiral_sweep(replace(base, angle=base.angle * jitter, cap=True))


GENERATORS = {
    "boulder": lambda s: generate_boulder(s, BoulderParams(subdivisions=1)),
    "tree": lambda s: _skinned("tree", s, 0.02, 1.12),
    "bush": lambda s: _skinned("bush", s, 0.01, 1.1),
    "pine": lambda s: _skinned("pine", s, 0.02, 1.12),
    "bush_coral": lambda s: _skinned("bush_coral", s, 0.004, 1.05),
    "twig_coral": lambda s: _skinned("twig_coral", s, 0.003, 1.05),
    "leather_coral": lambda s: G.build_preset("leather_coral", s),
    "table_coral": lambda s: G.build_preset("table_coral", s),
    "brain_coral": _brain,
    "cauliflower_coral": _cauliflower,
    "conch": lambda s: _shell("conch", s),
    "auger": lambda s: _shell("auger", s),
    "volute": lambda s: _shell("volute", s),
    "nautilus": lambda s: _shell("nautilus", s),
}


def asset_kinds() -> list[str]:
    return sorted(GENERATORS)


def generate_asset(kind: str, seed: int) -> Mesh:
    """Unit-footprint mesh for ``kind`` (see :func:`normalize`)."""
    if kind not in GENERATORS:
        raise KeyError(f"unknown asset kind {kind!r}; known: {', '.join(asset_kinds())}")
    return normalize(GENERATORS[kind](seed))


@lru_cache(maxsize=128)
def _cached(kind: str, seed: int) -> Mesh:
    return generate_asset(kind, seed)


def instantiate(ph: Placeholder, object_id: int = 0) -> Mesh:
    """World-space mesh for a placeholder, tagged with its instance id."""
    local = _cached(ph.kind, ph.seed)
    if local.is_empty():
        return local
    # sink slightly so the base sits below undulating ground
    v = local.vertices * ph.footprint - np.array([0.0, 0.0, 0.05 * ph.footprint])
    world = Mesh(v, local.faces).transformed(ph.rotation, ph.translation)
    return world.with_ids(instance_id=ph.instance_id, object_id=object_id)


def footprint_of(mesh: Mesh) -> float:
    v = mesh.vertices
    return float(np.linalg.norm(v[:, :2] - v[:, :2].mean(axis=0), axis=1).max()) if len(v) else 0.0


__all__ = ["asset_kinds", "generate_asset", "instantiate", "icosphere", "normalize", "footprint_of"]
