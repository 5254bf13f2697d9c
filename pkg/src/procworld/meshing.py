"""Mesh extraction from SDFs.

:func:`marching_cubes_uniform` is the classical fixed-interval extractor.
:func:`spherical_marching_cubes` samples the field on a camera-centred
``(theta, phi, log r)`` lattice so cells project to roughly constant pixel
size, and only meshes the blocks a pixel can actually see.

Both share one vectorised polygoniser that works on any structured lattice:
vertices are keyed by the global lattice edge they lie on, so blocks meshed
independently weld exactly along shared faces.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._mc_tables import CORNERS, EDGES, TRIANGLES
from .camera import CameraModel
from .fields import FieldProgram
from .mesh import Mesh, merge

log = logging.getLogger(__name__)

_EDGE_AXIS = np.argmax(np.abs(CORNERS[EDGES[:, 1]] - CORNERS[EDGES[:, 0]]), axis=1)
_TRI = TRIANGLES[:, :15].reshape(256, 5, 3).astype(np.int64)


def _evaluate_chunked(sdf, pts: np.ndarray, chunk: int = 1 << 18) -> np.ndarray:
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        out[s : s + chunk] = sdf(pts[s : s + chunk])
    return out


def polygonise(corner_values: np.ndarray, corner_ids: np.ndarray, node_position) -> tuple[np.ndarray, np.ndarray]:
    """Run marching cubes over an explicit list of cells.

    ``corner_values``/``corner_ids`` are ``(C, 8)`` in table corner order;
    ids are global lattice node ids.  ``node_position(ids)`` maps ids to
    points.  Returns vertices and faces with vertices sorted by edge key, so
    output is independent of cell order.  Faces wind counter-clockwise seen
    from the positive (outside) side.
    """
    vals = np.where(corner_values == 0.0, 1e-12, corner_values)  # zero counts as outside
    inside = vals < 0.0
    cube = (inside.astype(np.int64) << np.arange(8)).sum(axis=1)
    active = np.nonzero((cube != 0) & (cube != 255))[0]
    if len(active) == 0:
        return np.zeros((0, 3)), np.zeros((0, 3), np.int64)
    tris = _TRI[cube[active]]  # (K, 5, 3)
    valid = tris[:, :, 0] >= 0
    cell = np.repeat(active, valid.sum(axis=1))
    tri_edges = tris[valid]  # (T, 3)
    cell3 = np.repeat(cell, 3)
    e = tri_edges.ravel()
    ca, cb = EDGES[e, 0], EDGES[e, 1]
    ida, idb = corner_ids[cell3, ca], corner_ids[cell3, cb]
    va, vb = vals[cell3, ca], vals[cell3, cb]
    swap = ida > idb
    lo_id = np.where(swap, idb, ida)
    hi_id = np.where(swap, ida, idb)
    lo_v = np.where(swap, vb, va)
    hi_v = np.where(swap, va, vb)
    key = lo_id * 3 + _EDGE_AXIS[e]
    ukey, first, inverse = np.unique(key, return_index=True, return_inverse=True)
    t = lo_v[first] / (lo_v[first] - hi_v[first])
    plo = node_position(lo_id[first])
    phi = node_position(hi_id[first])
    verts = plo + t[:, None] * (phi - plo)
    faces = inverse.reshape(-1, 3)
    # table winds clockwise about the outward normal for this corner layout
    return verts, faces[:, ::-1].copy()


def _lattice_cells(shape, offset=(0, 0, 0), global_shape=None):
    """Corner node ids for every cell of a sub-box of a global lattice."""
    nx, ny, nz = shape  # node counts of the sub-box
    gx, gy, gz = global_shape or shape
    ox, oy, oz = offset
    i, j, k = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), np.arange(nz - 1), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    ids = np.empty((len(i), 8), np.int64)
    local = np.empty((len(i), 8), np.int64)
    for c, (dx, dy, dz) in enumerate(CORNERS):
        ids[:, c] = ((i + dx + ox) * gy + (j + dy + oy)) * gz + (k + dz + oz)
        local[:, c] = ((i + dx) * ny + (j + dy)) * nz + (k + dz)
    return ids, local


def marching_cubes_uniform(sdf: FieldProgram, bbox, cells) -> Mesh:
    """Classical marching cubes over an axis-aligned box.

    ``cells`` is a count per axis (int or 3-tuple).  A field with no sign
    change yields an empty mesh.
    """
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bbox)
    n = np.broadcast_to(np.asarray(cells, dtype=np.int64), (3,))
    if np.any(n < 1):
        raise ValueError("need at least one cell per axis")
    axes = [np.linspace(lo[a], hi[a], n[a] + 1) for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    values = _evaluate_chunked(sdf, pts)
    shape = tuple(int(x) + 1 for x in n)
    ids, _ = _lattice_cells(shape)
    verts, faces = polygonise(values[ids], ids, lambda q: pts[q])
    return Mesh(verts, faces)


def marching_cubes_grid(values: np.ndarray, origin=(0.0, 0.0, 0.0), spacing=1.0) -> Mesh:
    """Marching cubes over a precomputed ``(nx, ny, nz)`` sample grid (negative inside)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or min(values.shape) < 2:
        raise ValueError("need a 3D grid with at least 2 samples per axis")
    origin = np.asarray(origin, dtype=np.float64)
    h = np.broadcast_to(np.asarray(spacing, dtype=np.float64), (3,))
    shape = values.shape
    flat = values.ravel()
    ids, _ = _lattice_cells(shape)

    def position(q):
        ijk = np.stack(np.unravel_index(q, shape), axis=1)
        return origin + ijk * h

    verts, faces = polygonise(flat[ids], ids, position)
    return Mesh(verts, faces)


def cell_size(bbox, cells) -> np.ndarray:
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bbox)
    return (hi - lo) / np.broadcast_to(np.asarray(cells, dtype=np.float64), (3,))


# --------------------------------------------------------------------------
# view-dependent resolution


def target_edge_length(depth: float, camera: CameraModel, target_px: float) -> float:
    """World edge length that projects to about ``target_px`` pixels at ``depth``."""
    if depth <= 0:
        raise ValueError("depth must be positive")
    return depth * (camera.fov_y / camera.height) * target_px


@dataclass(frozen=True)
class SphericalGrid:
    """Block counts over azimuth, elevation and log-radius."""

    m: int = 64
    n: int = 64
    r: int = 128

    def __post_init__(self):
        if min(self.m, self.n, self.r) < 1:
            raise ValueError("block counts must be >= 1")

    def radii(self, d_min: float, d_max: float) -> np.ndarray:
        """Block boundaries; consecutive ratios equal ``(d_max/d_min)**(1/r)``."""
        return d_min * (d_max / d_min) ** (np.arange(self.r + 1) / self.r)


def spherical_to_camera(theta, phi, r) -> np.ndarray:
    """Camera-frame points from azimuth (about +y), elevation (toward +y) and range."""
    cp = np.cos(phi)
    return np.stack([r * cp * np.sin(theta), r * np.sin(phi), r * cp * np.cos(theta)], axis=-1)


def camera_to_spherical(pc: np.ndarray):
    x, y, z = pc[..., 0], pc[..., 1], pc[..., 2]
    return np.arctan2(x, z), np.arctan2(y, np.hypot(x, z)), np.linalg.norm(pc, axis=-1)


@dataclass
class SphericalLattice:
    """The high-resolution lattice: blocks subdivided into uniform cells."""

    camera: CameraModel
    grid: SphericalGrid
    theta0: float
    phi0: float
    log_r0: float
    d_theta: float  # per high-res cell
    d_phi: float
    d_logr: float
    cells: tuple[int, int, int]  # per block

    @property
    def node_shape(self) -> tuple[int, int, int]:
        ct, cp, cr = self.cells
        return self.grid.m * ct + 1, self.grid.n * cp + 1, self.grid.r * cr + 1

    def node_world(self, ids: np.ndarray) -> np.ndarray:
        gx, gy, gz = self.node_shape
        k = ids % gz
        j = (ids // gz) % gy
        i = ids // (gz * gy)
        return self.index_world(i, j, k)

    def index_world(self, i, j, k) -> np.ndarray:
        theta = self.theta0 + np.asarray(i) * self.d_theta
        phi = self.phi0 + np.asarray(j) * self.d_phi
        r = np.exp(self.log_r0 + np.asarray(k) * self.d_logr)
        return self.camera.camera_to_world(spherical_to_camera(theta, phi, r).reshape(-1, 3))

    def block_radius(self, k):
        return np.exp(self.log_r0 + np.asarray(k) * self.cells[2] * self.d_logr)


@dataclass
class SphericalMeshResult:
    mesh: Mesh
    out_of_view: Mesh | None
    visible_blocks: np.ndarray  # (B, 3) block indices, lexicographic
    pixel_blocks: np.ndarray  # (H, W, 3), -1 where no surface found
    pixel_range: np.ndarray  # (H, W) ray distance of the first crossing, inf on miss
    lattice: SphericalLattice
    warnings: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)


def build_lattice(camera: CameraModel, grid: SphericalGrid, target_px: float = 1.0, margin_px: float = 2.0):
    pix = camera.fov_y / camera.height  # angular size of one pixel
    step = pix * target_px
    ht, hp = camera.half_angles()
    ht += margin_px * pix
    hp += margin_px * pix
    d_block_t = 2 * ht / grid.m
    d_block_p = 2 * hp / grid.n
    log_span = math.log(camera.far / camera.near)
    d_block_r = log_span / grid.r
    cells = (
        max(1, math.ceil(d_block_t / step - 1e-9)),
        max(1, math.ceil(d_block_p / step - 1e-9)),
        max(1, math.ceil(d_block_r / step - 1e-9)),
    )
    return SphericalLattice(
        camera,
        grid,
        -ht,
        -hp,
        math.log(camera.near),
        d_block_t / cells[0],
        d_block_p / cells[1],
        d_block_r / cells[2],
        cells,
    )


def _block_cells(lat: SphericalLattice, blocks: np.ndarray):
    """Corner ids for every high-res cell of every block, block-major."""
    ct, cp, cr = lat.cells
    gshape = lat.node_shape
    ids, _ = _lattice_cells((ct + 1, cp + 1, cr + 1), (0, 0, 0), gshape)
    gy, gz = gshape[1], gshape[2]
    base = ((blocks[:, 0] * ct) * gy + blocks[:, 1] * cp) * gz + blocks[:, 2] * cr
    return (base[:, None, None] + ids[None]).reshape(-1, 8)


def _corner_offsets(lat: SphericalLattice) -> np.ndarray:
    _, gy, gz = lat.node_shape
    return np.array([(dx * gy + dy) * gz + dz for dx, dy, dz in CORNERS], np.int64)


def _narrow_band_cells(sdf, lat: SphericalLattice, blocks: np.ndarray, lipschitz: float):
    """Base node ids of the high-res cells the surface may cross.

    Each block is halved recursively; a box is dropped once the field at its
    centre exceeds ``lipschitz`` times a bound on its world-space diameter,
    since no zero crossing can then lie inside.  ``reach`` bounds the
    distance from the centre to any point of the box.  Returns sorted base ids and
    the number of field evaluations spent on culling.
    """
    per = np.array(lat.cells, np.int64)
    lo = np.asarray(blocks, np.int64).reshape(-1, 3) * per
    size = np.tile(per, (len(lo), 1))
    leaves = []
    evals = 0
    while len(lo):
        c = lo + 0.5 * size
        v = _evaluate_chunked(sdf, lat.index_world(c[:, 0], c[:, 1], c[:, 2]))
        evals += len(lo)
        r_lo = np.exp(lat.log_r0 + lo[:, 2] * lat.d_logr)
        r_hi = np.exp(lat.log_r0 + (lo[:, 2] + size[:, 2]) * lat.d_logr)
        r_c = np.exp(lat.log_r0 + c[:, 2] * lat.d_logr)
        reach = np.maximum(r_hi - r_c, r_c - r_lo) + 0.5 * r_hi * (size[:, 0] * lat.d_theta + size[:, 1] * lat.d_phi)
        near = np.abs(v) <= lipschitz * reach
        lo, size = lo[near], size[near]
        leaf = (size <= 1).all(axis=1)
        leaves.append((lo[leaf], size[leaf]))
        lo, size = lo[~leaf], size[~leaf]
        half = np.maximum(size // 2, 1)
        kids_lo, kids_size = [], []
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    d = np.array([dx, dy, dz])
                    ksize = np.where(d == 1, size - half, half)
                    ok = (ksize > 0).all(axis=1)
                    kids_lo.append((lo + d * half)[ok])
                    kids_size.append(ksize[ok])
        lo = np.concatenate(kids_lo) if kids_lo else lo
        size = np.concatenate(kids_size) if kids_size else size
    _, gy, gz = lat.node_shape
    out = [(q[:, 0] * gy + q[:, 1]) * gz + q[:, 2] for q, _ in leaves]
    cells = np.unique(np.concatenate(out)) if out else np.zeros(0, np.int64)
    return cells, int(evals)


def spherical_marching_cubes(
    sdf: FieldProgram,
    camera: CameraModel,
    grid: SphericalGrid | None = None,
    target_px: float = 1.0,
    *,
    selection: str = "visible",
    lipschitz: float = 1.0,
    out_of_view_cells: int = 0,
    batch_nodes: int = 1 << 21,
) -> SphericalMeshResult:
    """View-adaptive marching cubes in camera-centred spherical coordinates.

    ``selection="visible"`` meshes only blocks holding the first surface
    crossing of some pixel ray; ``"all"`` meshes every block the surface may
    pass through inside the frustum (closed objects come out closed).
    ``lipschitz`` bounds the field's gradient and controls how conservatively
    the coarse pass flags blocks for dense re-checking.
    """
    grid = grid or SphericalGrid()
    lat = build_lattice(camera, grid, target_px)
    ct, cp, cr = lat.cells
    warnings: list[str] = []

    # low-resolution pass over block corners
    bi, bj, bk = np.meshgrid(
        np.arange(grid.m + 1) * ct, np.arange(grid.n + 1) * cp, np.arange(grid.r + 1) * cr, indexing="ij"
    )
    low_pts = lat.index_world(bi.ravel(), bj.ravel(), bk.ravel())
    low = _evaluate_chunked(sdf, low_pts).reshape(grid.m + 1, grid.n + 1, grid.r + 1)
    corners = np.stack(
        [low[dx : dx + grid.m, dy : dy + grid.n, dz : dz + grid.r] for dx, dy, dz in CORNERS], axis=-1
    )
    crossing = (corners.min(axis=-1) < 0) & (corners.max(axis=-1) >= 0)
    r_lo = lat.block_radius(np.arange(grid.r))
    r_hi = lat.block_radius(np.arange(1, grid.r + 1))
    diam = (r_hi - r_lo) + r_hi * (ct * lat.d_theta + cp * lat.d_phi)
    candidate = crossing | (np.abs(corners).min(axis=-1) <= lipschitz * diam[None, None, :])

    # per-pixel visible block search, re-checked with dense ray samples
    H, W = camera.height, camera.width
    rays = camera.pixel_rays().reshape(-1, 3)
    theta, phi, _ = camera_to_spherical(rays)
    dirs = rays / np.linalg.norm(rays, axis=1, keepdims=True)
    col_i = np.clip(((theta - lat.theta0) / (ct * lat.d_theta)).astype(np.int64), 0, grid.m - 1)
    col_j = np.clip(((phi - lat.phi0) / (cp * lat.d_phi)).astype(np.int64), 0, grid.n - 1)
    origin = camera.position
    world_dirs = dirs @ camera.rotation
    hit_k = np.full(H * W, -1, np.int64)
    hit_r = np.full(H * W, np.inf)
    near_boundary = np.zeros(H * W, np.int64)  # -1/+1 when the crossing hugs a radial block face
    pending = np.ones(H * W, bool)
    samples = np.arange(cr + 1)
    for k in range(grid.r):
        idx = np.nonzero(pending & candidate[col_i, col_j, k])[0]
        if len(idx) == 0:
            continue
        rr = np.exp(lat.log_r0 + (k * cr + samples) * lat.d_logr)
        pts = origin + world_dirs[idx, None, :] * rr[None, :, None]
        v = _evaluate_chunked(sdf, pts.reshape(-1, 3)).reshape(len(idx), cr + 1)
        change = (v[:, :-1] < 0) != (v[:, 1:] < 0)
        found = change.any(axis=1)
        if not found.any():
            continue
        sel = idx[found]
        first = np.argmax(change[found], axis=1)
        va = v[found, first]
        vb = v[found, first + 1]
        t = va / (va - vb)
        ra, rb = rr[first], rr[first + 1]
        hit_r[sel] = ra + t * (rb - ra)
        hit_k[sel] = k
        near_boundary[sel] = np.where(first == 0, -1, np.where(first == cr - 1, 1, 0))
        pending[sel] = False

    pixel_blocks = np.full((H * W, 3), -1, np.int64)
    hit = hit_k >= 0
    pixel_blocks[hit] = np.stack([col_i[hit], col_j[hit], hit_k[hit]], axis=1)

    if selection == "visible":
        extra = []
        for side in (-1, 1):
            m = hit & (near_boundary == side)
            kk = np.clip(hit_k[m] + side, 0, grid.r - 1)
            extra.append(np.stack([col_i[m], col_j[m], kk], axis=1))
        blocks = np.concatenate([pixel_blocks[hit]] + extra)
    elif selection == "all":
        blocks = np.argwhere(candidate)
    else:
        raise ValueError(f"unknown selection {selection!r}")
    blocks = np.unique(blocks.reshape(-1, 3), axis=0)
    if len(blocks) == 0:
        warnings.append("no visible blocks: surface not found in view range")
        log.warning(warnings[-1])

    # high-resolution meshing of the selected blocks, narrow band only
    cells, band_evals = _narrow_band_cells(sdf, lat, blocks, lipschitz)
    cell_ids = []
    cell_vals = []
    per_batch = max(1, batch_nodes // 8)
    for s in range(0, len(cells), per_batch):
        ids = cells[s : s + per_batch, None] + _corner_offsets(lat)[None, :]
        uniq, inv = np.unique(ids, return_inverse=True)
        vals = _evaluate_chunked(sdf, lat.node_world(uniq))
        cell_ids.append(ids)
        cell_vals.append(vals[inv.reshape(ids.shape)])
    if cell_ids:
        verts, faces = polygonise(np.concatenate(cell_vals), np.concatenate(cell_ids), lat.node_world)
        mesh = Mesh(verts, faces)
    else:
        mesh = Mesh.empty()

    out_mesh = None
    if out_of_view_cells > 0:
        out_mesh = _out_of_view(sdf, camera, out_of_view_cells)

    stats = {
        "cells_per_block": list(lat.cells),
        "visible_blocks": int(len(blocks)),
        "block_cells": int(len(blocks) * ct * cp * cr),
        "high_res_cells": int(len(cells)),
        "band_evaluations": band_evals,
        "low_res_nodes": int(low.size),
        "hit_pixels": int(hit.sum()),
        "triangles": int(mesh.n_faces),
    }
    return SphericalMeshResult(
        mesh,
        out_mesh,
        blocks,
        pixel_blocks.reshape(H, W, 3),
        hit_r.reshape(H, W),
        lat,
        warnings,
        stats,
    )


def in_frustum(camera: CameraModel, points: np.ndarray) -> np.ndarray:
    uv, z = camera.project(points)
    ok = (z > 0) & np.isfinite(uv).all(axis=1)
    ok &= (uv[:, 0] >= 0) & (uv[:, 0] <= camera.width) & (uv[:, 1] >= 0) & (uv[:, 1] <= camera.height)
    r = np.linalg.norm(camera.world_to_camera(points), axis=1)
    return ok & (r >= camera.near) & (r <= camera.far)


def _out_of_view(sdf, camera: CameraModel, cells: int) -> Mesh:
    """Coarse uniform mesh of everything within ``far`` that the view mesh skips."""
    c = camera.position
    m = marching_cubes_uniform(sdf, (c - camera.far, c + camera.far), cells)
    if m.is_empty():
        return m
    centroids = m.vertices[m.faces].mean(axis=1)
    keep = ~in_frustum(camera, centroids)
    out = Mesh(m.vertices, m.faces[keep]).compact()
    return out.with_ids(object_id=-1)


def projected_edge_lengths(mesh: Mesh, camera: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Pixel length of every mesh edge and the mean z-depth of its endpoints."""
    e = mesh.edges()
    uv, z = camera.project(mesh.vertices)
    px = np.linalg.norm(uv[e[:, 0]] - uv[e[:, 1]], axis=1)
    return px, 0.5 * (z[e[:, 0]] + z[e[:, 1]])


__all__ = [
    "Mesh",
    "merge",
    "SphericalGrid",
    "SphericalMeshResult",
    "marching_cubes_uniform",
    "spherical_marching_cubes",
    "target_edge_length",
    "polygonise",
    "projected_edge_lengths",
]
