"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""

import ast
import json
import math
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy import stats
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from procworld import fields as F
from procworld import growth as G
from procworld import pipeline as P
from procworld import terrain as T
from procworld.camera import CameraModel
from procworld.groundtruth import disparity, occlusion_boundaries, rasterize
from procworld.mesh import Mesh, merge
from procworld.meshing import (
    SphericalGrid,
    cell_size,
    marching_cubes_uniform,
    projected_edge_lengths,
    spherical_marching_cubes,
)
from procworld.nodegraph import interpret, load_source, parse_graph, sample_annotations, transpile
from procworld.scene import AssetChoice, PlacementRule, make_stereo_rig, place_assets, sample_ground_points

from test_groundtruth import _normal_errors, quad, ray_triangle_oracle, sphere_mesh
from test_growth import _hand_step
from test_nodegraph import random_graph
from test_terrain import _centerline_samples, make_tile_spec


@contextmanager
def criterion(capsys, number, title, limit_s=None):
    """Time the body and print a PASS/FAIL line that bypasses output capture."""
    start = time.perf_counter()
    status = "FAIL"
    try:
        yield
        elapsed = time.perf_counter() - start
        if limit_s is not None:
            assert elapsed < limit_s, f"took {elapsed:.1f}s, limit {limit_s}s"
        status = "PASS"
    finally:
        elapsed = time.perf_counter() - start
        with capsys.disabled():
            print(f"\nCRITERION {number} {status}: {title} [{elapsed:.1f}s]")


def local_cell(res, cam, v):
    lat = res.lattice
    r = np.linalg.norm(cam.world_to_camera(v), axis=1)
    return r * math.sqrt(lat.d_theta**2 + lat.d_phi**2 + lat.d_logr**2)


# 1 ---------------------------------------------------------------------------


def test_criterion_1_pixel_size_invariance(capsys):
    with criterion(capsys, 1, "spherical meshing keeps edges near one pixel at all depths", 60):
        sdf = F.plane((0, 0, 1), 0) | F.sphere(1, (0, 6, 1)) | F.sphere(1.5, (-4, 15, 1.5)) | F.sphere(3, (8, 40, 3))
        cam = CameraModel.from_pose((0, 0, 1.7), math.pi / 2, -0.15, 256, 144, math.pi / 3, near=0.2, far=200)
        res = spherical_marching_cubes(sdf, cam, SphericalGrid(64, 64, 128), 1.0)
        px, z = projected_edge_lengths(res.mesh, cam)
        ok = (z > 0) & (px > 0)
        assert 0.5 <= np.median(px[ok]) <= 2.0
        edges = np.quantile(z[ok], np.linspace(0, 1, 11))
        med = [np.median(np.log2(px[ok & (z >= a) & (z <= b)])) for a, b in zip(edges[:-1], edges[1:])]
        assert np.std(med) < 1.0


# 2 ---------------------------------------------------------------------------


def test_criterion_2_mesher_accuracy(capsys):
    with criterion(capsys, 2, "uniform and spherical meshes stay within a cell of the surface", 30):
        sphere, torus = F.sphere(1.0), F.torus(1.0, 0.35)
        box = ((-1.5, -1.5, -1.5), (1.5, 1.5, 1.5))
        for sdf, chi, cells in ((sphere, 2, 48), (torus, 0, 60)):
            m = marching_cubes_uniform(sdf, box, cells)
            h = max(cell_size(box, cells))
            # both SDFs are exact, so |sdf| is the distance to the true surface
            assert np.abs(sdf(m.vertices)).max() < h
            assert m.euler_characteristic() == chi and m.is_watertight()
        cam = CameraModel.from_pose((0, 0, 0), math.pi / 2, 0.0, 128, 72, math.pi / 3, near=0.2, far=200)
        for sdf, chi in ((F.sphere(1.0, (0, 8, 0)), 2), (F.torus(1.0, 0.35, (0, 8, 0)), 0)):
            res = spherical_marching_cubes(sdf, cam, SphericalGrid(32, 32, 64), 1.0, selection="all")
            m = res.mesh
            assert np.all(np.abs(sdf(m.vertices)) < local_cell(res, cam, m.vertices))
            assert m.euler_characteristic() == chi and m.is_watertight()


# 3 ---------------------------------------------------------------------------


def test_criterion_3_ground_truth_exactness(capsys):
    with criterion(capsys, 3, "depth, normals, disparity and stereo warp match their oracles"):
        cam = CameraModel(256, 256, math.pi / 3)
        scene = merge([sphere_mesh(1.0, (0.3, -0.2, 4.0), 12), quad(-3, 3, -3, 3, 7.0), sphere_mesh(0.6, (-1, 0.8, 5.5), 8)])
        fb = rasterize(scene, cam)
        r = np.random.default_rng(0)
        ys, xs = r.integers(0, 256, 10_000), r.integers(0, 256, 10_000)
        oracle = ray_triangle_oracle(cam.pixel_rays()[ys, xs], scene.vertices[scene.faces])
        got = fb.depth[ys, xs]
        hit = np.isfinite(oracle)
        assert np.array_equal(hit, np.isfinite(got))
        assert np.all(np.abs(got[hit] - oracle[hit]) <= 1e-6 * oracle[hit])

        c = np.array([0.0, 0.0, 4.0])
        err = _normal_errors(sphere_mesh(1.2, c, 128), lambda p: p - c, cam)
        assert len(err) > 10_000 and np.median(err) < 2.0
        axes = np.array([1.4, 0.8, 1.0])
        s = sphere_mesh(1.0, c, 128)
        err = _normal_errors(Mesh(c + (s.vertices - c) * axes, s.faces), lambda p: (p - c) / axes**2, cam)
        assert len(err) > 10_000 and np.median(err) < 2.0

        b = 0.2
        d = disparity(fb, b)
        seen = fb.hit
        assert np.array_equal(d[seen], cam.focal_px * b / fb.depth[seen]) and np.all(d[~seen] == 0)

        small = CameraModel(96, 64, math.pi / 3)
        pair = merge([sphere_mesh(1.0, (0.5, 0, 5), 48, 1), quad(-30, 30, -30, 30, 12.0, 2)])
        left, right = make_stereo_rig(small, b)
        fl, fr = rasterize(pair, left), rasterize(pair, right)
        d = disparity(fl, (left, right))
        u, _ = small.pixel_grid()
        col = np.floor(u - d).astype(int)
        inside = fl.hit & (col >= 0) & (col < small.width)
        rows = np.arange(small.height)[:, None].repeat(small.width, 1)
        zr = np.full(fl.shape, np.nan)
        zr[inside] = fr.depth[rows[inside], col[inside]]
        covis = inside & np.isfinite(zr)
        agree = np.abs(zr[covis] - fl.depth[covis]) <= 0.01 * fl.depth[covis]
        assert covis.sum() > 1000 and agree.mean() >= 0.95


# 4 ---------------------------------------------------------------------------


def dilate(mask, r):
    out = mask.copy()
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            out |= np.roll(np.roll(mask, dy, 0), dx, 1)
    return out


def test_criterion_4_occlusion_boundaries(capsys):
    with criterion(capsys, 4, "occlusion boundaries recall every silhouette with no interior noise"):
        cam = CameraModel(64, 64, math.pi / 3)
        fb = rasterize(merge([quad(0, 100, -100, 100, 2.0, 1), quad(-100, 100, -100, 100, 4.0, 2)]), cam)
        mask = occlusion_boundaries(fb)
        # near edge x = 0 falls between columns 31 and 32
        truth = np.zeros_like(mask)
        truth[:, 31:33] = True
        assert np.array_equal(mask, truth)

        W = H = 128
        cam = CameraModel(W, H, math.pi / 3)
        c = np.array([0.0, 0.0, 5.0])
        fb = rasterize(merge([sphere_mesh(1.0, c, 96, 1), quad(-20, 20, -20, 20, 9.0, 2)]), cam)
        mask = occlusion_boundaries(fb)
        rays = cam.pixel_rays()
        rays /= np.linalg.norm(rays, axis=-1, keepdims=True)
        inside = np.linalg.norm(np.cross(rays, c), axis=-1) < 1.0
        sil = np.zeros_like(inside)
        sil[:, :-1] |= inside[:, :-1] != inside[:, 1:]
        sil[:, 1:] |= inside[:, :-1] != inside[:, 1:]
        sil[:-1] |= inside[:-1] != inside[1:]
        sil[1:] |= inside[:-1] != inside[1:]
        assert dilate(mask, 1)[sil].all()
        interior = ~dilate(~inside, 2)
        background = ~dilate(inside, 2)
        assert (mask & (interior | background)).sum() < 0.001 * W * H


# 5 ---------------------------------------------------------------------------


def test_criterion_5_growth_suites(capsys):
    with criterion(capsys, 5, "growth algorithms keep their invariants and budgets", 120):
        s = G.ReactionDiffusionState.torus(32, 0.0625, 0.0625, perturb=False)
        A = G.gray_scott(s, 100)
        assert np.max(np.abs(A - 1.0)) <= 1e-12 and np.max(np.abs(s.B)) <= 1e-12

        k = 0.0625
        assert G.brain_feed(k) == pytest.approx(math.sqrt(k) / 2 - k)
        A = G.gray_scott(G.ReactionDiffusionState.torus(64, G.brain_feed(k), k, seed=0), 1000)
        assert A.var() > 1e-3

        r = np.random.default_rng(3)
        A0, B0 = r.uniform(0, 1, (3, 3, 3)), r.uniform(0, 0.5, (3, 3, 3))
        p = dict(alpha=0.9, gamma=10.0, tau=3e-4, epsilon=0.01, kappa=1.8, t_eq=1.0, spacing=0.03, dt=1e-5)
        pf = G.PhaseFieldState(A0, B0, **p)
        G.phase_field_step(pf)
        hA, hB = _hand_step(A0, B0, p)
        assert np.max(np.abs(pf.A - hA)) <= 1e-12
        assert np.max(np.abs(pf.B - hB) / np.maximum(1, np.abs(hB))) <= 1e-12

        for preset, budget in ((G.LEATHER_CORAL, 1000), (G.TABLE_CORAL, 400)):
            assert preset.max_faces == budget
            m = G.differential_growth(preset)
            assert budget <= m.n_faces <= budget + m.attributes["last_burst"]
            assert m.edge_lengths().max() <= 1.5 * preset.split_length
            assert m.is_manifold()

        sk = G.recursive_paths(G.GrowthConfig(branch_levels=1, path_nodes=8, seed=2))
        pts = G.attraction_points("ball", (0, 0, 1.2), 0.6, 300, seed=3)
        kill = 0.08
        out, alive = G.space_colonization(sk, pts, 0.5, kill, 25, return_points=True)
        removed = pts[~alive]
        assert len(removed) > 0
        dist, _ = cKDTree(out.positions).query(removed)
        assert np.all(dist <= kill)
        # surviving points are all outside the kill radius of every node
        dist, _ = cKDTree(out.positions).query(pts[alive])
        assert np.all(dist > kill)


# 6 ---------------------------------------------------------------------------

ANNOTATIONS = {
    "constant": ("value ~ U(-1.5, 2.5)", lambda v: -1.5 <= v <= 2.5),
    "sdf_sphere": ("radius ~ LU(0.2, 2.0)", lambda v: 0.2 <= v <= 2.0),
    "smooth_min": ("k ~ C(0.1, 0.2, 0.4)", lambda v: v in (0.1, 0.2, 0.4)),
    "perlin": ("frequency ~ N(1.5, 0.3)", math.isfinite),
}


def annotate(text):
    doc = json.loads(text)
    for n in doc["nodes"]:
        if n["type"] in ANNOTATIONS:
            n["name"] = ANNOTATIONS[n["type"]][0]
    return json.dumps(doc)


def is_post_order(src):
    tree = ast.parse(src)
    functions = {f.name for f in tree.body if isinstance(f, ast.FunctionDef)}
    for fn in tree.body:
        if not isinstance(fn, ast.FunctionDef):
            continue
        defined = {a.arg for a in fn.args.args} | {"POSITION"}
        for stmt in fn.body:
            used = {n.id for n in ast.walk(stmt) if isinstance(n, ast.Name) and isinstance(n.ctx, ast.Load)}
            if used - {"node", "as_input", "float"} - functions - defined:
                return False
            if isinstance(stmt, ast.Assign):
                defined.add(stmt.targets[0].id)
    return True


def test_criterion_6_transpiler_round_trip(capsys):
    with criterion(capsys, 6, "100 random graphs agree between interpreter and emitted source"):
        pts = np.random.default_rng(7).uniform(-2, 2, size=(100, 3))
        for seed in range(100):
            doc = parse_graph(annotate(random_graph(seed)))
            _, src = transpile(doc)
            ref = interpret(doc, pts)
            np.testing.assert_allclose(load_source(src)(pts), ref, rtol=0, atol=1e-12)
            assert is_post_order(src), seed
            sampled = sample_annotations(doc, seed)
            for node in sampled.nodes:
                if node.annotation is None:
                    continue
                _, param = node.annotation.target
                assert ANNOTATIONS[node.type][1](node.inputs[param].value), (seed, node.id)
            _, src = transpile(sampled)
            np.testing.assert_allclose(load_source(src)(pts), interpret(sampled, pts), rtol=0, atol=1e-12)


# 7 ---------------------------------------------------------------------------


def test_criterion_7_terrain(capsys):
    with criterion(capsys, 7, "caves open their centerlines, tiles are seamless and boulders are manifold"):
        base = T.TerrainElement(F.plane(offset=100.0), "mountain")
        passages = T.generate_cave_skeleton(T.CaveSystemSpec(seed=2, max_depth=30, fork_probability=0.1))
        carved = T.carve_caves(base, passages)
        assert np.all(carved(_centerline_samples(passages)) > 0)
        far = np.random.default_rng(6).uniform(-300, 300, (4000, 3))
        s, e, r0, r1 = T.passage_segments(passages)
        gap = F.capsule_chain_sdf(far, s, e, np.zeros_like(r0), np.zeros_like(r1))
        far = far[gap > max(r0.max(), r1.max()) + 4.0]
        assert len(far) > 1000
        assert np.abs(carved(far) - base(far)).max() <= 1e-9

        tile = make_tile_spec()
        rng = np.random.default_rng(10)
        k, y = rng.integers(-6, 6, 200), rng.uniform(-50, 50, 200)
        x, eps = k * tile.extent, 1e-9
        jump_x = np.abs(T.tiled_heights(tile, x - eps, y) - T.tiled_heights(tile, x + eps, y))
        jump_y = np.abs(T.tiled_heights(tile, y, x - eps) - T.tiled_heights(tile, y, x + eps))
        assert max(jump_x.max(), jump_y.max()) < 1e-6

        for seed in range(100):
            m = T.generate_boulder(seed)
            assert m.is_manifold() and m.is_watertight(), seed


# 8 ---------------------------------------------------------------------------


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_8_determinism(capsys, tmp_path):
    with criterion(capsys, 8, "pipeline output trees are byte-identical across runs", 300):
        for name in ("a", "b"):
            P.run_pipeline(P.RunConfig("desert", 42, str(tmp_path / name), 128, 72))
        a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
        assert set(a) == set(b) and len(a) > 10
        assert [k for k in a if a[k] != b[k]] == ["profile.json"]
        P.run_pipeline(P.RunConfig("desert", 42, str(tmp_path / "c"), 128, 72, camera_seed=99))
        assert (tmp_path / "c" / "meshes" / "assets.ply").read_bytes() == a["meshes/assets.ply"]
        assert (tmp_path / "c" / "scene.json").read_bytes() != a["scene.json"]


# 9 ---------------------------------------------------------------------------


def test_criterion_9_poisson_disk(capsys):
    with criterion(capsys, 9, "scattering never violates the hard core and yaw is uniform"):
        spacing = 2.0
        rule = PlacementRule(density=20 / spacing**2, min_spacing=spacing)
        flat = F.plane((0, 0, 1), 0.0)
        region = ((-20, -20, -1), (20, 20, 1))
        violations, yaws = 0, []
        for seed in range(1000):
            g = sample_ground_points(flat, region, rule, seed)
            violations += int((pdist(g.points) < spacing).sum())
            yaws += [p.yaw for p in place_assets(g, [AssetChoice("boulder")], seed)]
        assert violations == 0
        counts, _ = np.histogram(yaws, bins=12, range=(0, 2 * math.pi))
        assert stats.chisquare(counts).pvalue > 0.01


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
