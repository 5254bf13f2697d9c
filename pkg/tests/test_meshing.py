import math

import numpy as np
import pytest

from procworld import fields as F
from procworld.camera import CameraModel
from procworld.io import ply_bytes
from procworld.meshing import (
    SphericalGrid,
    build_lattice,
    camera_to_spherical,
    cell_size,
    in_frustum,
    marching_cubes_grid,
    marching_cubes_uniform,
    projected_edge_lengths,
    spherical_marching_cubes,
    spherical_to_camera,
    target_edge_length,
)
from procworld.tracing import trace_camera


def plane_and_spheres():
    return F.plane((0, 0, 1), 0) | F.sphere(1, (0, 6, 1)) | F.sphere(1.5, (-4, 15, 1.5)) | F.sphere(3, (8, 40, 3))


def street_camera(w=256, h=144):
    return CameraModel.from_pose((0, 0, 1.7), math.pi / 2, -0.15, w, h, math.pi / 3, near=0.2, far=200)


def facing_camera(w=128, h=72, far=200.0):
    # looks along +y from the origin, z up
    return CameraModel.from_pose((0, 0, 0), math.pi / 2, 0.0, w, h, math.pi / 3, near=0.2, far=far)


# -- uniform marching cubes --------------------------------------------------


def test_uniform_sphere_vertices_close():
    m = marching_cubes_uniform(F.sphere(1.0), ((-2, -2, -2), (2, 2, 2)), 64)
    h = cell_size(((-2, -2, -2), (2, 2, 2)), 64)[0]
    err = np.abs(np.linalg.norm(m.vertices, axis=1) - 1.0)
    assert err.max() < h
    assert m.euler_characteristic() == 2
    assert m.is_manifold() and m.is_watertight()
    assert m.signed_volume() == pytest.approx(4 / 3 * math.pi, rel=0.01)


def test_uniform_torus_genus_one():
    m = marching_cubes_uniform(F.torus(1.0, 0.35), ((-1.5, -1.5, -0.5), (1.5, 1.5, 0.5)), (60, 60, 20))
    assert m.euler_characteristic() == 0
    assert m.is_watertight()


def test_uniform_constant_field_empty():
    assert marching_cubes_uniform(F.constant(1.0), ((0, 0, 0), (1, 1, 1)), 8).is_empty()
    assert marching_cubes_uniform(F.constant(-1.0), ((0, 0, 0), (1, 1, 1)), 8).is_empty()
    with pytest.raises(ValueError):
        marching_cubes_uniform(F.sphere(), ((0, 0, 0), (1, 1, 1)), 0)


def test_outward_winding():
    m = marching_cubes_uniform(F.sphere(1.0), ((-2, -2, -2), (2, 2, 2)), 20)
    c = m.vertices[m.faces].mean(axis=1)
    assert np.all(np.einsum("ij,ij->i", m.face_normals(), c) > 0)


def test_plane_interpolation_exact():
    # a linear field is reproduced exactly by linear edge interpolation
    m = marching_cubes_uniform(F.plane((0, 0, 1), 0.3), ((-1, -1, -1), (1, 1, 1)), 10)
    assert np.abs(m.vertices[:, 2] - 0.3).max() < 1e-12


def test_grid_variant_matches_program_variant():
    bbox = ((-2, -2, -2), (2, 2, 2))
    a = marching_cubes_uniform(F.sphere(1.2), bbox, 16)
    xs = np.linspace(-2, 2, 17)
    g = np.stack(np.meshgrid(xs, xs, xs, indexing="ij"), -1).reshape(-1, 3)
    b = marching_cubes_grid(F.sphere(1.2)(g).reshape(17, 17, 17), (-2, -2, -2), 0.25)
    assert np.allclose(a.vertices, b.vertices) and np.array_equal(a.faces, b.faces)


def test_uniform_deterministic():
    bbox = ((-2, -2, -2), (2, 2, 2))
    a = marching_cubes_uniform(F.sphere(1.0) | F.sphere(0.5, (1, 0, 0)), bbox, 24)
    b = marching_cubes_uniform(F.sphere(1.0) | F.sphere(0.5, (1, 0, 0)), bbox, 24)
    assert ply_bytes(a) == ply_bytes(b)


# -- resolution helpers ------------------------------------------------------


def test_target_edge_length_formula():
    cam = CameraModel(1920, 1080, math.pi / 3)
    assert target_edge_length(10.0, cam, 1.0) == pytest.approx(10 * (math.pi / 3) / 1080)
    assert target_edge_length(10.0, cam, 1.0) == pytest.approx(0.0097, abs=1e-4)
    assert target_edge_length(20.0, cam, 1.0) == pytest.approx(2 * target_edge_length(10.0, cam, 1.0))
    assert target_edge_length(10.0, cam, 0.0) == 0.0
    with pytest.raises(ValueError):
        target_edge_length(0.0, cam, 1.0)


def test_spherical_grid_radii_log_spaced():
    g = SphericalGrid(8, 8, 32)
    r = g.radii(0.5, 500.0)
    ratio = r[1:] / r[:-1]
    assert np.allclose(ratio, (500 / 0.5) ** (1 / 32))
    assert r[0] == pytest.approx(0.5) and r[-1] == pytest.approx(500.0)
    with pytest.raises(ValueError):
        SphericalGrid(0, 1, 1)


def test_spherical_coordinate_round_trip():
    r = np.random.default_rng(0)
    t, p, rr = r.uniform(-1, 1, 100), r.uniform(-1, 1, 100), r.uniform(0.1, 50, 100)
    t2, p2, r2 = camera_to_spherical(spherical_to_camera(t, p, rr))
    assert np.allclose(t, t2) and np.allclose(p, p2) and np.allclose(rr, r2)


def test_lattice_cells_about_target_pixels():
    cam = street_camera()
    lat = build_lattice(cam, SphericalGrid(64, 64, 128), 1.0)
    pix = cam.fov_y / cam.height
    for d in (lat.d_theta, lat.d_phi, lat.d_logr):
        assert 0.5 * pix <= d <= pix + 1e-12


# -- spherical marching cubes ------------------------------------------------


@pytest.fixture(scope="module")
def street():
    sdf = plane_and_spheres()
    cam = street_camera()
    return sdf, cam, spherical_marching_cubes(sdf, cam, SphericalGrid(64, 64, 128), 1.0)


def test_street_median_edge_near_one_pixel(street):
    _, cam, res = street
    px, z = projected_edge_lengths(res.mesh, cam)
    assert 0.5 <= np.median(px[z > 0]) <= 2.0


def test_street_edge_size_depth_invariant(street):
    _, cam, res = street
    px, z = projected_edge_lengths(res.mesh, cam)
    ok = (z > 0) & (px > 0)
    edges = np.quantile(z[ok], np.linspace(0, 1, 11))
    med = [np.median(np.log2(px[ok & (z >= a) & (z <= b)])) for a, b in zip(edges[:-1], edges[1:])]
    assert np.std(med) < 1.0


def test_street_visible_blocks_complete(street):
    sdf, cam, res = street
    oracle = trace_camera(sdf, cam)
    hit = np.isfinite(oracle)
    miss = hit & (res.pixel_blocks[..., 0] < 0)
    assert miss.sum() < 0.005 * hit.sum()


def test_street_mesh_stitched(street):
    _, _, res = street
    assert res.mesh.is_manifold()
    assert not res.warnings


def test_street_vertex_accuracy(street):
    # plane and sphere SDFs are exact, so |sdf| is the distance to the true surface
    sdf, cam, res = street
    v = res.mesh.vertices
    r_cam = np.linalg.norm(cam.world_to_camera(v), axis=1)
    lat = res.lattice
    local = r_cam * math.sqrt(lat.d_theta**2 + lat.d_phi**2 + lat.d_logr**2)
    assert np.all(np.abs(sdf(v)) < local)


def test_spherical_sphere_accuracy_and_closure():
    cam = facing_camera()
    sdf = F.sphere(1.0, (0, 8, 0))
    res = spherical_marching_cubes(sdf, cam, SphericalGrid(32, 32, 64), 1.0, selection="all")
    m = res.mesh
    lat = res.lattice
    r_cam = np.linalg.norm(cam.world_to_camera(m.vertices), axis=1)
    local = r_cam * math.sqrt(lat.d_theta**2 + lat.d_phi**2 + lat.d_logr**2)
    err = np.abs(np.linalg.norm(m.vertices - [0, 8, 0], axis=1) - 1.0)
    assert np.all(err < local)
    assert m.euler_characteristic() == 2 and m.is_watertight()


def test_face_area_scales_with_distance_squared():
    cam = facing_camera(far=200.0)
    areas = []
    for d in (5.0, 50.0):
        res = spherical_marching_cubes(F.sphere(0.1 * d, (0, d, 0)), cam, SphericalGrid(32, 32, 64), 1.0, selection="all")
        areas.append(res.mesh.face_areas().mean())
    ratio = areas[1] / areas[0]
    assert 100 / 2 <= ratio <= 100 * 2


def test_high_res_cost_grows_quadratically():
    sdf = plane_and_spheres()
    cells = []
    for w, h in ((128, 72), (256, 144)):
        res = spherical_marching_cubes(sdf, street_camera(w, h), SphericalGrid(32, 32, 64), 1.0)
        cells.append(res.stats["high_res_cells"])
    exponent = math.log(cells[1] / cells[0]) / math.log(2.0)
    assert 1.6 <= exponent <= 2.4


def _canonical_faces(f):
    # rotate each triangle so its smallest index leads (keeps winding), then sort rows
    f = np.asarray(f)
    r = np.argmin(f, axis=1)
    f = np.stack([f[np.arange(len(f)), (r + i) % 3] for i in range(3)], axis=1)
    return f[np.lexsort(f.T[::-1])]


def test_narrow_band_keeps_mesh_identical():
    sdf = plane_and_spheres()
    cam = street_camera(64, 36)
    res = spherical_marching_cubes(sdf, cam, SphericalGrid(16, 16, 32), 1.0)
    assert res.stats["high_res_cells"] < res.stats["block_cells"]
    # brute force: every cell of every selected block
    from procworld.meshing import _block_cells, polygonise

    ids = _block_cells(res.lattice, res.visible_blocks)
    vals = sdf(res.lattice.node_world(ids.ravel())).reshape(ids.shape)
    v, f = polygonise(vals, ids, res.lattice.node_world)
    assert np.array_equal(v, res.mesh.vertices)
    assert np.array_equal(_canonical_faces(f), _canonical_faces(res.mesh.faces))


def test_nothing_visible_warns():
    cam = facing_camera()
    res = spherical_marching_cubes(F.sphere(1.0, (0, -20, 0)), cam, SphericalGrid(8, 8, 16), 1.0)
    assert res.mesh.is_empty()
    assert res.warnings and "no visible blocks" in res.warnings[0]


def test_spherical_deterministic():
    sdf = plane_and_spheres()
    a = spherical_marching_cubes(sdf, street_camera(64, 36), SphericalGrid(16, 16, 32), 1.0)
    b = spherical_marching_cubes(sdf, street_camera(64, 36), SphericalGrid(16, 16, 32), 1.0)
    assert ply_bytes(a.mesh) == ply_bytes(b.mesh)


def test_out_of_view_part_tagged():
    sdf = F.sphere(1.0, (0, 8, 0)) | F.sphere(1.0, (0, -8, 0))
    cam = facing_camera(far=20.0)
    res = spherical_marching_cubes(sdf, cam, SphericalGrid(16, 16, 32), 1.0, out_of_view_cells=40)
    out = res.out_of_view
    assert out is not None and out.n_faces > 0
    assert np.all(out.object_ids == -1)
    assert not in_frustum(cam, out.vertices[out.faces].mean(axis=1)).any()
    # the sphere behind the camera only shows up in the coarse part
    assert np.all(res.mesh.vertices[:, 1] > 0)
    assert np.any(out.vertices[:, 1] < -6)


def test_projected_edges_of_fronto_parallel_square():
    cam = CameraModel(100, 100, math.pi / 2)  # f = 50 px, looks along +z
    from procworld.mesh import Mesh

    m = Mesh([[0, 0, 10], [1, 0, 10], [1, 1, 10], [0, 1, 10]], [[0, 1, 2], [0, 2, 3]])
    px, z = projected_edge_lengths(m, cam)
    assert np.allclose(z, 10.0)
    assert np.allclose(np.sort(px)[:4], 5.0)
