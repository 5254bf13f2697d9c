import math

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from procworld import fields as F
from procworld import terrain as T
from procworld.fields import NoiseSpec
from procworld.io import ply_bytes
from procworld.seeding import hash_cells


def grid16(lo=-8.0, hi=8.0):
    xs = np.linspace(lo, hi, 16)
    g = np.stack(np.meshgrid(xs, xs, xs, indexing="ij"), axis=-1)
    return g.reshape(-1, 3)


# -- eroded rocks ------------------------------------------------------------


def test_eroded_zero_amplitude_is_plane():
    e = T.eroded_rocks(NoiseSpec(seed=1), base_height=2.0, amplitude=0.0)
    assert F.eval_field(e.sdf, (0, 0, 3.0)) == 1.0
    p = grid16()
    assert np.allclose(e(p), p[:, 2] - 2.0)


def test_eroded_deterministic_on_grid():
    spec = NoiseSpec(frequency=0.2, octaves=4, seed=5, warp=(1.0, NoiseSpec(frequency=0.1, seed=6)))
    a = T.eroded_rocks(spec, 0.0, 2.0)(grid16())
    b = T.eroded_rocks(spec, 0.0, 2.0)(grid16())
    assert a.tobytes() == b.tobytes()


def test_warp_changes_most_samples():
    plain = NoiseSpec(frequency=0.2, octaves=3, seed=5)
    warped = NoiseSpec(frequency=0.2, octaves=3, seed=5, warp=(1.5, NoiseSpec(frequency=0.15, seed=9)))
    p = np.random.default_rng(0).uniform(-10, 10, (1000, 3))
    a = T.eroded_rocks(plain, 0, 2.0)(p)
    b = T.eroded_rocks(warped, 0, 2.0)(p)
    assert np.mean(np.abs(a - b) > 1e-9) > 0.5


def test_far_field_positive():
    e = T.eroded_rocks(NoiseSpec(frequency=0.1, octaves=4, seed=2), 0.0, 3.0)
    p = np.random.default_rng(1).uniform(-500, 500, (1000, 3))
    p[:, 2] = np.abs(p[:, 2]) + 10.0
    assert np.all(e(p) > 0)


def test_lipschitz_continuity_sampled():
    spec = NoiseSpec(frequency=0.2, octaves=4, seed=5, warp=(1.0, NoiseSpec(frequency=0.1, seed=6)))
    e = T.eroded_rocks(spec, 0.0, 2.0)
    r = np.random.default_rng(2)
    p = r.uniform(-20, 20, (10_000, 3))
    d = r.normal(size=(10_000, 3)) * 1e-3
    ratio = np.abs(e(p + d) - e(p)) / np.linalg.norm(d, axis=1)
    assert ratio.max() < 10.0


# -- voronoi rocks -----------------------------------------------------------


def test_voronoi_rocks_empty_parent_stays_empty():
    empty = T.TerrainElement(F.constant(1.0), "empty")
    rocks = T.voronoi_rocks(empty, 1.0, 0.1, seed=3)
    p = np.random.default_rng(3).uniform(-10, 10, (5000, 3))
    assert np.all(rocks(p) > 0)


def test_voronoi_rocks_active_cell_center_is_solid():
    ground = T.TerrainElement(F.plane(offset=0.0), "plane")
    rocks = T.voronoi_rocks(ground, 0.5, 0.1, seed=4)
    p = np.random.default_rng(4).uniform([-20, -20, 0.0], [20, 20, 1.0], (4000, 3))
    _, centers = F.voronoi(p, 4, 0.5)
    centers = np.unique(centers.round(12), axis=0)
    active_above = centers[(centers[:, 2] > 0.05) & (centers[:, 2] <= 1.0)]
    assert len(active_above) > 5
    # above the parent surface, so only the rock can make these points solid
    assert np.all(ground(active_above) > 0)
    assert np.all(rocks(active_above) < 0)


def test_voronoi_rocks_zero_gap_cells_touch():
    ground = T.TerrainElement(F.plane(offset=0.0), "plane")
    rocks = T.voronoi_rocks(ground, 0.5, 0.0, seed=7, rock_radius=100.0, band=100.0)
    r = np.random.default_rng(5)
    p = r.uniform([-20, -20, 0.5], [20, 20, 3.0], (3000, 3))
    _, _, c1, c2 = F.voronoi_f1f2(p, 7, 0.5)
    n = (c2 - c1) / np.linalg.norm(c2 - c1, axis=1, keepdims=True)
    m = 0.5 * (c1 + c2)
    q = p - np.einsum("ij,ij->i", p - m, n)[:, None] * n  # project onto the bisector
    f1, f2, d1, d2 = F.voronoi_f1f2(q, 7, 0.5)
    same = np.isclose(f1, f2, atol=1e-9) & (
        (np.all(np.isclose(d1, c1), 1) & np.all(np.isclose(d2, c2), 1))
        | (np.all(np.isclose(d1, c2), 1) & np.all(np.isclose(d2, c1), 1))
    )
    assert same.sum() > 100
    assert np.all(rocks(q[same]) <= 1e-9)


# -- caves -------------------------------------------------------------------


def test_no_fork_gives_single_polyline():
    spec = T.CaveSystemSpec(fork_probability=0.0, max_depth=20, seed=3)
    passages = T.generate_cave_skeleton(spec)
    assert len(passages) == 1
    assert len(passages[0].points) <= spec.max_depth + 1


def test_always_fork_branches():
    spec = T.CaveSystemSpec(fork_probability=1.0, max_depth=3, seed=3)
    assert len(T.generate_cave_skeleton(spec)) >= 4


def test_cave_skeleton_deterministic():
    spec = T.CaveSystemSpec(seed=11)
    a = T.generate_cave_skeleton(spec)
    b = T.generate_cave_skeleton(spec)
    assert len(a) == len(b)
    for pa, pb in zip(a, b):
        assert pa.points.tobytes() == pb.points.tobytes() and pa.radii.tobytes() == pb.radii.tobytes()


@pytest.mark.parametrize("seed", range(5))
def test_cave_forest_structure(seed):
    spec = T.CaveSystemSpec(fork_probability=0.2, max_depth=25, seed=seed)
    passages = T.generate_cave_skeleton(spec)
    assert passages[0].parent is None
    assert np.allclose(passages[0].points[0], spec.entrance)
    lo, hi = spec.radius_range
    for i, p in enumerate(passages):
        if i:
            assert p.parent is not None and p.parent < i
            # forks start on a vertex of their parent
            assert np.min(np.linalg.norm(passages[p.parent].points - p.points[0], axis=1)) < 1e-12
        assert len(np.unique(p.points.round(9), axis=0)) == len(p.points)
        assert len(p.points) <= spec.max_depth + 1
        assert np.all(p.radii >= lo - 1e-12) and np.all(p.radii <= max(hi, spec.cavern_size) + 1e-12)


@pytest.mark.parametrize(
    "kw",
    [dict(rule_weights={"advance": 0.0}), dict(rule_weights={"dig": 1.0}), dict(radius_range=(0.0, 1.0)), dict(fork_probability=1.5)],
)
def test_cave_spec_validation(kw):
    with pytest.raises(ValueError):
        T.CaveSystemSpec(**kw)


def _centerline_samples(passages, per_segment=5):
    s, e, _, _ = T.passage_segments(passages)
    t = np.linspace(0, 1, per_segment)
    return (s[:, None, :] + t[None, :, None] * (e - s)[:, None, :]).reshape(-1, 3)


def test_carving_opens_centerlines_and_keeps_far_field():
    base = T.TerrainElement(F.plane(offset=100.0), "mountain")  # solid below z = 100
    passages = T.generate_cave_skeleton(T.CaveSystemSpec(seed=2, max_depth=30, fork_probability=0.1))
    carved = T.carve_caves(base, passages)
    center = _centerline_samples(passages)
    assert np.all(carved(center) > 0)
    far = np.random.default_rng(6).uniform(-300, 300, (2000, 3))
    s, e, r0, r1 = T.passage_segments(passages)
    seg_dist = F.capsule_chain_sdf(far, s, e, np.zeros_like(r0), np.zeros_like(r1))
    far = far[seg_dist > max(r0.max(), r1.max()) + 2 * 2.0]  # beyond twice the default influence
    assert len(far) > 1000
    assert np.abs(carved(far) - base(far)).max() <= 1e-9


def test_carving_sign_matches_plain_subtraction():
    base = T.eroded_rocks(NoiseSpec(frequency=0.1, octaves=3, seed=1), 5.0, 4.0)
    passages = T.generate_cave_skeleton(T.CaveSystemSpec(seed=5))
    carved = T.carve_caves(base, passages)
    plain = F.sdf_combine("subtract", base.sdf, T.cave_tubes(passages))
    p = np.random.default_rng(17).uniform(-30, 30, (20000, 3))
    assert np.array_equal(carved(p) > 0, plain(p) > 0)
    near = p[T.cave_tubes(passages)(p) < 2.0]
    assert np.array_equal(carved(near), plain(near))


def test_carving_never_adds_solid():
    base = T.eroded_rocks(NoiseSpec(frequency=0.1, octaves=3, seed=1), 5.0, 4.0)
    passages = T.generate_cave_skeleton(T.CaveSystemSpec(seed=5))
    carved = T.carve_caves(base, passages)
    p = np.random.default_rng(7).uniform(-30, 30, (5000, 3))
    assert np.all(carved(p) >= base(p))
    assert T.carve_caves(base, []) is base


def test_capsule_sdf_matches_closed_form():
    p = np.random.default_rng(8).uniform(-3, 3, (500, 3))
    s, e = np.array([[0.0, 0, 0]]), np.array([[2.0, 0, 0]])
    v = F.capsule_chain_sdf(p, s, e, np.array([0.5]), np.array([0.5]))
    t = np.clip(p[:, 0] / 2.0, 0, 1)
    closest = np.stack([2.0 * t, np.zeros_like(t), np.zeros_like(t)], 1)
    assert np.allclose(v, np.linalg.norm(p - closest, axis=1) - 0.5)


# -- tiled landscape ---------------------------------------------------------


def make_tile_spec(margin=3.0, seed=9, n=33, extent=16.0):
    h = T.make_tile(n, extent, NoiseSpec(frequency=0.15, octaves=3, seed=seed), amplitude=2.0)
    return T.TileSpec(h, extent, margin, seed)


def test_constant_tile_constant_landscape():
    tile = T.TileSpec(np.full((9, 9), 1.25), 10.0, 2.0, 3)
    p = np.random.default_rng(9).uniform(-100, 100, (2000, 3))
    assert np.allclose(T.tiled_heights(tile, p[:, 0], p[:, 1]), 1.25, atol=1e-12)


def test_seams_are_continuous():
    tile = make_tile_spec()
    E = tile.extent
    r = np.random.default_rng(10)
    k = r.integers(-6, 6, 100)
    y = r.uniform(-50, 50, 100)
    eps = 1e-9
    hx = np.abs(T.tiled_heights(tile, k * E - eps, y) - T.tiled_heights(tile, k * E + eps, y))
    hy = np.abs(T.tiled_heights(tile, y, k * E - eps) - T.tiled_heights(tile, y, k * E + eps))
    assert hx.max() < 1e-6 and hy.max() < 1e-6


def test_cell_interior_matches_rotated_tile():
    tile = make_tile_spec(margin=0.0, n=17)
    n, E = tile.heights.shape[0], tile.extent
    for ci, cj in [(0, 0), (1, -2), (-3, 4), (5, 5), (-1, -1), (2, 7)]:
        k = int(hash_cells(tile.seed, np.array(ci), np.array(cj)) & np.uint64(3))
        rotated = np.rot90(tile.heights, k)
        i, j = np.meshgrid(np.arange(1, n - 1), np.arange(1, n - 1), indexing="ij")
        x = ci * E + i * E / (n - 1)
        y = cj * E + j * E / (n - 1)
        got = T.tiled_heights(tile, x.ravel().astype(float), y.ravel().astype(float))
        assert np.allclose(got, rotated[i, j].ravel(), atol=1e-9)


def test_cells_with_same_rotation_share_content():
    tile = make_tile_spec(margin=0.0)
    E = tile.extent
    cells = [(i, j) for i in range(-4, 4) for j in range(-4, 4)]
    rot = {c: int(T.tile_rotation(tile.seed, c[0], c[1])) for c in cells}
    a, b = next((a, b) for a in cells for b in cells if a != b and rot[a] == rot[b])
    off = np.random.default_rng(11).uniform(0.5, E - 0.5, (200, 2))
    ha = T.tiled_heights(tile, a[0] * E + off[:, 0], a[1] * E + off[:, 1])
    hb = T.tiled_heights(tile, b[0] * E + off[:, 0], b[1] * E + off[:, 1])
    assert np.allclose(ha, hb, atol=1e-12)


def test_tile_spec_validation():
    with pytest.raises(ValueError):
        T.TileSpec(np.zeros((3, 4)), 10.0)
    with pytest.raises(ValueError):
        T.TileSpec(np.zeros((3, 3)), 10.0, 5.0)


def test_thermal_erosion_conserves_mass_and_flattens():
    h = np.random.default_rng(12).normal(size=(32, 32)) * 3
    e = T.thermal_erosion(h, 1.0, iterations=100)
    assert e.sum() == pytest.approx(h.sum(), abs=1e-9)
    assert np.abs(np.diff(e, axis=0)).max() < np.abs(np.diff(h, axis=0)).max()


# -- floating islands --------------------------------------------------------


def test_floating_island_basic_regions():
    isl = T.floating_island(center=(0, 0, 10), radius=8, top_height=3, bottom_depth=6, noise=NoiseSpec(seed=3, frequency=0.2))
    assert F.eval_field(isl.sdf, (0, 0, 30)) > 0
    xs = np.linspace(-8, 8, 33)
    zs = np.linspace(0, 16, 33)
    g = np.stack(np.meshgrid(xs, xs, zs, indexing="ij"), -1).reshape(-1, 3)
    inside = g[isl(g) < 0]
    assert len(inside) > 0
    assert F.eval_field(isl.sdf, inside.mean(axis=0)) < 0
    lo, hi = isl.bounds
    far = np.random.default_rng(13).uniform(-40, 40, (4000, 3)) + [0, 0, 10]
    out = np.any((far < lo) | (far > hi), axis=1)
    assert np.all(isl(far[out]) > 0)


def test_floating_island_mirror_symmetry():
    isl = T.floating_island(center=(1, 2, 10), radius=8, top_height=4, bottom_depth=4, noise=NoiseSpec(seed=5, frequency=0.2))
    r = np.random.default_rng(14)
    xy = r.uniform(-10, 10, (1000, 2))
    d = r.uniform(0, 6, 1000)
    up = np.column_stack([xy, 10 + d])
    down = np.column_stack([xy, 10 - d])
    assert np.abs(isl(up) - isl(down)).max() < 1e-6


# -- boulders ----------------------------------------------------------------


def test_plain_boulder_is_convex():
    params = T.BoulderParams(large_probability=0, small_probability=0, displacement_low=0, displacement_high=0, subdivisions=0)
    m = T.generate_boulder(3, params)
    hull = ConvexHull(m.vertices)
    assert len(hull.vertices) == m.n_vertices
    offsets = m.vertices @ hull.equations[:, :3].T + hull.equations[:, 3]
    assert offsets.max() < 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_boulder_manifold_sphere(seed):
    m = T.generate_boulder(seed)
    assert m.is_manifold() and m.is_watertight()
    assert m.euler_characteristic() == 2
    assert m.signed_volume() > 0


def test_boulder_deterministic_bytes():
    assert ply_bytes(T.generate_boulder(42)) == ply_bytes(T.generate_boulder(42))
    assert ply_bytes(T.generate_boulder(42)) != ply_bytes(T.generate_boulder(43))


def test_boulder_needs_four_points():
    with pytest.raises(ValueError):
        T.generate_boulder(0, T.BoulderParams(n_points=3))


def test_union_takes_minimum():
    a = T.TerrainElement(F.plane(offset=0.0), "a")
    b = T.TerrainElement(F.sphere(2.0, (0, 0, 3)), "b")
    p = grid16()
    assert np.array_equal(T.union(a, b)(p), np.minimum(a(p), b(p)))


def test_target_angles():
    # sanity on the helper used by cave pitch clamps
    assert T.CaveSystemSpec().max_pitch == pytest.approx(math.radians(30))
