import json
import math

import numpy as np
import pytest
from scipy import stats
from scipy.spatial.distance import pdist

from procworld import fields as F
from procworld.camera import CameraModel
from procworld.scene import (
    AssetChoice,
    CameraCandidate,
    CameraConstraints,
    CameraSelectionError,
    GroundPoints,
    Placeholder,
    PlacementRule,
    SceneGraph,
    align_up,
    depth_score,
    hard_core_filter,
    include_assets,
    make_stereo_rig,
    place_assets,
    probe_depth,
    rank_candidates,
    sample_ground_points,
    select_camera,
    sphere_set_sdf,
)
from procworld.scenetypes import (
    asset_choices,
    build_terrain,
    camera_constraints,
    load_scene_type,
    placement_rule,
    region_of,
    scene_type_names,
)
from procworld.terrain import TerrainElement

FLAT = F.plane((0, 0, 1), 0.0)
FLAT_REGION = ((-50, -50, -1), (50, 50, 1))


# -- ground sampling ---------------------------------------------------------


def test_zero_mask_gives_no_points():
    rule = PlacementRule(density=2.0, mask=F.constant(0.0), min_spacing=1.0)
    assert len(sample_ground_points(FLAT, FLAT_REGION, rule, 3)) == 0


def test_flat_plane_hard_core_and_saturation_density():
    s = 2.0
    rule = PlacementRule(density=20 / s**2, min_spacing=s)
    g = sample_ground_points(FLAT, FLAT_REGION, rule, 7)
    assert pdist(g.points).min() >= s
    density = len(g) / (100 * 100)
    assert 0.3 / s**2 <= density <= 0.7 / s**2
    assert np.allclose(g.points[:, 2], 0.0, atol=1e-9)
    assert np.allclose(g.normals, [0, 0, 1], atol=1e-9)


def test_cliff_face_rejected_by_slope_gate():
    cliff = F.plane((1, 0, 0), 0.0)
    rule = PlacementRule(density=5.0, max_slope=math.radians(30), min_spacing=0.5)
    assert len(sample_ground_points(cliff, ((-5, -20, -20), (5, 20, 20)), rule, 1)) == 0


def test_mesa_only_flat_tops_kept():
    mesa = FLAT | F.box((6, 6, 4), (0, 0, 0))
    rule = PlacementRule(density=5.0, max_slope=math.radians(30), min_spacing=0.5)
    g = sample_ground_points(mesa, ((-20, -20, -2), (20, 20, 8)), rule, 2)
    assert len(g) > 100
    assert np.all(g.normals[:, 2] >= math.cos(math.radians(30)) - 1e-12)
    # nothing on the vertical walls
    on_wall = (np.abs(np.abs(g.points[:, :2]).max(axis=1) - 6) < 0.2) & (g.points[:, 2] > 0.5) & (g.points[:, 2] < 3.5)
    assert not on_wall.any()


def test_mask_thins_points():
    half = F.node("greater_than", F.node("separate", F.POSITION, axis=0), 0.0)  # 1 for x > 0
    rule = PlacementRule(density=2.0, mask=half, min_spacing=1.0)
    g = sample_ground_points(FLAT, FLAT_REGION, rule, 5)
    assert len(g) > 100 and np.all(g.points[:, 0] >= 0)


def test_ground_sampling_deterministic():
    rule = PlacementRule(density=1.0, min_spacing=1.5)
    a = sample_ground_points(FLAT, FLAT_REGION, rule, 11)
    b = sample_ground_points(FLAT, FLAT_REGION, rule, 11)
    assert a.points.tobytes() == b.points.tobytes()
    c = sample_ground_points(FLAT, FLAT_REGION, rule, 12)
    assert a.points.shape != c.points.shape or not np.array_equal(a.points, c.points)


def test_hard_core_filter_matches_sequential_oracle():
    pts = np.random.default_rng(0).uniform(0, 10, size=(400, 3))
    keep = hard_core_filter(pts, 1.0)
    expect = []
    for i, p in enumerate(pts):
        if all(np.linalg.norm(p - pts[j]) >= 1.0 for j in expect):
            expect.append(i)
    assert np.nonzero(keep)[0].tolist() == expect


def test_placement_rule_validation():
    with pytest.raises(ValueError):
        PlacementRule(density=-1)
    with pytest.raises(ValueError):
        PlacementRule(min_spacing=0)


# -- asset placement ---------------------------------------------------------


def _grid_points(n):
    xs = np.arange(n, dtype=float)
    return np.column_stack([xs, np.zeros(n), np.zeros(n)])


def test_single_kind_distribution():
    ph = place_assets(_grid_points(50), [AssetChoice("boulder")], 1)
    assert len(ph) == 50 and {p.kind for p in ph} == {"boulder"}
    assert [p.instance_id for p in ph] == list(range(1, 51))


def test_empty_points_empty_placeholders():
    assert place_assets(np.zeros((0, 3)), [AssetChoice("boulder")], 1) == []
    assert place_assets(GroundPoints(np.zeros((0, 3)), np.zeros((0, 3))), [AssetChoice("bush")], 1) == []


def test_yaw_uniform_chi_square():
    ph = place_assets(_grid_points(10_000), [AssetChoice("boulder")], 123)
    yaw = np.array([p.yaw for p in ph])
    counts, _ = np.histogram(yaw, bins=12, range=(0, 2 * math.pi))
    assert stats.chisquare(counts).pvalue > 0.01


def test_kind_frequencies_follow_weights():
    choices = [AssetChoice("boulder", 3.0), AssetChoice("bush", 1.0)]
    ph = place_assets(_grid_points(4000), choices, 5)
    frac = sum(p.kind == "boulder" for p in ph) / 4000
    assert abs(frac - 0.75) < 3 * math.sqrt(0.75 * 0.25 / 4000)


def test_up_vector_follows_normal():
    normals = np.random.default_rng(3).normal(size=(30, 3))
    normals[:, 2] = np.abs(normals[:, 2]) + 0.5
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    ph = place_assets(_grid_points(30), [AssetChoice("boulder")], 2, normals=normals)
    for p, n in zip(ph, normals):
        assert np.allclose(p.up, n)
        assert np.allclose(p.rotation.T @ p.rotation, np.eye(3))
        assert np.linalg.det(p.rotation) == pytest.approx(1.0)


def test_align_up_heading():
    R = align_up(np.array([0, 0, 1.0]), 0.7)
    assert np.allclose(R[:, 0], [math.cos(0.7), math.sin(0.7), 0])
    R = align_up(np.array([0, 0, 1.0]) * 3, 0.0)
    assert np.allclose(R[:, 2], [0, 0, 1])


def test_variant_pool_shares_seeds():
    ph = place_assets(_grid_points(200), [AssetChoice("boulder"), AssetChoice("bush")], 9, variants=4)
    for kind in ("boulder", "bush"):
        assert 1 <= len({p.seed for p in ph if p.kind == kind}) <= 4
    again = place_assets(_grid_points(200), [AssetChoice("boulder"), AssetChoice("bush")], 9, variants=4)
    assert [p.seed for p in ph] == [p.seed for p in again]
    distinct = place_assets(_grid_points(200), [AssetChoice("boulder")], 9)
    assert len({p.seed for p in distinct}) == 200


def test_zero_weights_place_nothing():
    assert place_assets(_grid_points(5), [AssetChoice("boulder", 0.0)], 1) == []
    with pytest.raises(ValueError):
        AssetChoice("boulder", -1.0)


def test_inclusion_probabilities_within_three_sigma():
    choices = [AssetChoice("a", probability=0.2), AssetChoice("b", probability=0.5), AssetChoice("c", probability=0.9)]
    n = 1000
    counts = {c.kind: 0 for c in choices}
    for seed in range(n):
        for c in include_assets(choices, seed):
            counts[c.kind] += 1
    for c in choices:
        sigma = math.sqrt(n * c.probability * (1 - c.probability))
        assert abs(counts[c.kind] - n * c.probability) <= 3 * sigma


def test_placeholder_validation():
    with pytest.raises(ValueError):
        Placeholder("boulder", 1, np.eye(3), [0, 0, np.nan], 1.0)
    with pytest.raises(ValueError):
        Placeholder("boulder", 1, np.eye(3), [0, 0, 0], 0.0)


def test_sphere_set_sdf_matches_brute_force():
    r = np.random.default_rng(4)
    c = r.uniform(-20, 20, size=(300, 3))
    rad = r.uniform(0.2, 3.0, size=300)
    p = r.uniform(-25, 25, size=(2000, 3))
    brute = (np.linalg.norm(p[:, None] - c[None], axis=2) - rad[None]).min(axis=1)
    assert np.allclose(sphere_set_sdf(c, rad, p), brute)


# -- cameras -----------------------------------------------------------------


def test_empty_scene_camera_height_distribution():
    cons = CameraConstraints(candidates=1, width=32, height=18)
    for seed in range(40):
        cam = select_camera(SceneGraph(None), cons, seed)
        assert abs(cam.position[2] - cons.height_mean) <= 4 * cons.height_sigma


def test_camera_height_is_above_local_ground():
    terrain = TerrainElement(F.plane((0, 0, 1), 3.0), "ground")  # ground at z = 3
    cons = CameraConstraints(candidates=3, width=32, height=18, ground_top=20.0)
    cam = select_camera(SceneGraph(terrain), cons, 4)
    assert abs(cam.position[2] - 3.0 - cons.height_mean) <= 4 * cons.height_sigma


def test_pit_exhausts_with_min_distance():
    pit = TerrainElement(F.constant(0.1), "pit")  # surfaces everywhere within 0.1 m
    cons = CameraConstraints(budget=30, min_distance=0.5, width=32, height=18)
    with pytest.raises(CameraSelectionError) as err:
        select_camera(SceneGraph(pit), cons, 0)
    assert err.value.dominant == "min-distance"
    assert "min-distance" in str(err.value)


def test_coverage_constraint_rejection_reason():
    terrain = TerrainElement(FLAT, "terrain")
    cons = CameraConstraints(budget=20, coverage=(("rock", 0.5),), width=32, height=18)
    with pytest.raises(CameraSelectionError) as err:
        select_camera(SceneGraph(terrain), cons, 0)
    assert err.value.dominant == "coverage:rock"


def test_sphere_scene_has_higher_depth_stdev_and_wins():
    # looking down at the ground with a small rock close to the lens
    cam = CameraModel.from_pose((0, 0, 1.7), math.pi / 2, -0.6, 64, 36, math.radians(55), far=200)
    plane = FLAT
    with_sphere = FLAT | F.sphere(0.4, (0.6, 1.2, 0.9))
    d_plane = probe_depth(plane, cam)
    d_sphere = probe_depth(with_sphere, cam)
    s_plane, s_sphere = depth_score(d_plane), depth_score(d_sphere)
    hit = np.isfinite(d_sphere)
    assert s_sphere == pytest.approx(np.std(d_sphere[hit]))
    assert s_sphere > s_plane
    best = rank_candidates([CameraCandidate(cam, 1.7, s_plane, d_plane), CameraCandidate(cam, 1.7, s_sphere, d_sphere)])
    assert best.score == s_sphere


def test_camera_selection_deterministic():
    terrain = TerrainElement(FLAT | F.sphere(2.0, (3, 3, 0)), "terrain")
    cons = CameraConstraints(candidates=4, width=32, height=18)
    a = select_camera(SceneGraph(terrain), cons, 8)
    b = select_camera(SceneGraph(terrain), cons, 8)
    assert a.to_dict() == b.to_dict()


def test_stereo_rig_identities():
    cam = CameraModel.look_at((1, 2, 3), (4, 6, 2), 160, 90, math.radians(55))
    left, right = make_stereo_rig(cam, 0.1)
    assert np.allclose(right.position - left.position, 0.1 * cam.rotation[0])
    assert np.array_equal(left.intrinsics, right.intrinsics) and np.array_equal(left.rotation, right.rotation)
    # pinhole disparity of a point at depth Z
    p = left.camera_to_world(np.array([[0.3, -0.2, 7.0]]))
    ul, vl = left.project(p)[0][0]
    ur, vr = right.project(p)[0][0]
    assert ul - ur == pytest.approx(left.focal_px * 0.1 / 7.0)
    assert vl == pytest.approx(vr)
    l0, r0 = make_stereo_rig(cam, 0.0)
    assert l0.to_dict() == r0.to_dict()
    with pytest.raises(ValueError):
        make_stereo_rig(cam, -0.1)


# -- serialization and shipped scene types -----------------------------------


def test_scene_graph_round_trip():
    ph = place_assets(_grid_points(5), [AssetChoice("boulder", tags=("rock",))], 3)
    cam = CameraModel.from_pose((0, 0, 1.7), 0.3, -0.1, 64, 36, math.radians(55))
    sg = SceneGraph(None, ph, [cam], 3, {})
    back = SceneGraph.loads(sg.dumps())
    assert back.dumps() == sg.dumps()
    assert json.loads(sg.dumps())["format"] == "procworld-scene/1"


def test_scene_graph_round_trip_rebuilds_terrain():
    cfg = load_scene_type("desert")
    sg = SceneGraph(build_terrain(cfg, 5), [], [], 5, cfg)
    back = SceneGraph.loads(sg.dumps())
    p = np.random.default_rng(0).uniform(-30, 30, size=(200, 3))
    assert np.array_equal(back.terrain.sdf(p), sg.terrain.sdf(p))


@pytest.mark.parametrize("name", scene_type_names())
def test_shipped_scene_types_build(name):
    cfg = load_scene_type(name)
    lo, hi = region_of(cfg)
    terrain = build_terrain(cfg, 1)
    p = np.random.default_rng(1).uniform(lo, hi, size=(500, 3))
    v = terrain.sdf(p)
    assert np.isfinite(v).all() and (v < 0).any() and (v > 0).any()
    rule = placement_rule(cfg, 1)
    assert rule.min_spacing > 0
    assert all(c.kind for c in asset_choices(cfg))
    cons = camera_constraints(cfg, 64, 36)
    assert cons.width == 64 and cons.height == 36


def test_scene_types_listed_and_unknown_rejected():
    assert set(scene_type_names()) == {"arctic", "cave", "coast", "desert", "mountain", "river"}
    with pytest.raises(KeyError):
        load_scene_type("moon")
