import json
import math
import re

import numpy as np
import pytest

from procworld import io as IO
from procworld import pipeline as P
from procworld.cli import build_parser, main, parse_res
from procworld.scene import SceneGraph

SPHERE_GRAPH = {
    "nodes": [
        {"id": "p", "type": "position"},
        {"id": "s", "type": "sdf_sphere", "name": "radius ~ U(0.5, 2.0)", "inputs": {"p": "@p", "radius": 1.0}},
    ],
    "outputs": {"sdf": "@s"},
}


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def desert_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("desert")
    manifests = []
    for name in ("a", "b"):
        manifests.append(P.run_pipeline(P.RunConfig("desert", 42, str(base / name), 64, 36)))
    return base, manifests


# -- pipeline ----------------------------------------------------------------


def test_seed_42_twice_identical(desert_runs):
    base, (ma, mb) = desert_runs
    assert ma == mb and ma["status"] == "complete"
    a, b = tree_bytes(base / "a"), tree_bytes(base / "b")
    assert set(a) == set(b)
    assert [k for k in a if a[k] != b[k]] == ["profile.json"]


def test_manifest_lists_every_artifact_with_hash(desert_runs):
    base, (m, _) = desert_runs
    root = base / "a"
    listed = {a["path"]: a for a in m["artifacts"]}
    on_disk = {p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file()}
    assert set(listed) == on_disk - {"profile.json", "manifest.json"}
    for path, entry in listed.items():
        assert entry["sha256"] == P.sha256_file(root / path)
        assert entry["bytes"] == (root / path).stat().st_size
    assert m["format"] == P.MANIFEST_FORMAT and m["volatile"] == ["profile.json"]
    assert m["stages_completed"] == list(P.STAGES)
    assert "global seed 42" in m["seed_documentation"]


def test_output_layers_are_consistent(desert_runs):
    base, _ = desert_runs
    gt = base / "a" / "gt"
    depth = IO.read_pfm(gt / "depth.pfm")
    assert depth.shape == (36, 64)
    hit = np.isfinite(depth)
    assert hit.mean() > 0.3
    png = IO.read_png16(gt / "depth.png")
    scale = json.loads((gt / "depth.png.json").read_text())["scale"]
    assert np.array_equal(np.isfinite(png), hit)
    assert np.abs(png[hit] - depth[hit]).max() <= 0.5 / scale + 1e-5 * depth[hit].max()
    cams = json.loads((gt / "cameras.json").read_text())
    f = 0.5 * 36 / math.tan(0.5 * cams["left"]["fov_y"])
    disp = IO.read_pfm(gt / "disparity.pfm")
    assert np.allclose(disp[hit], (f * 0.1 / depth[hit]).astype(np.float32), rtol=1e-6)
    flow = IO.read_pfm(gt / "flow.pfm")
    assert flow.shape == (36, 64, 3) and set(np.unique(flow[..., 2])) <= {0.0, 1.0}
    normals = IO.read_pfm(gt / "normals.pfm")
    ok = np.isfinite(normals).all(axis=-1)
    assert ok.any() and np.allclose(np.linalg.norm(normals[ok], axis=-1), 1.0, atol=1e-5)
    inst = IO.read_label_png(gt / "instance.png")
    assert np.array_equal(inst >= 0, hit)
    scene = SceneGraph.loads((base / "a" / "scene.json").read_text())
    known = {0} | {p.instance_id for p in scene.placeholders}
    assert set(np.unique(inst[hit]).tolist()) <= known
    stats = json.loads((gt / "face_stats.json").read_text())
    assert sum(stats["pixels"]) == int(hit.sum())


def test_camera_seed_isolation(desert_runs, tmp_path):
    base, _ = desert_runs
    P.run_pipeline(P.RunConfig("desert", 42, str(tmp_path), 64, 36, camera_seed=7))
    assert (tmp_path / "meshes" / "assets.ply").read_bytes() == (base / "a" / "meshes" / "assets.ply").read_bytes()
    ca = json.loads((base / "a" / "scene.json").read_text())["cameras"]
    cb = json.loads((tmp_path / "scene.json").read_text())["cameras"]
    assert ca != cb


def test_compose_only(tmp_path):
    m = P.run_pipeline(P.RunConfig("desert", 3, str(tmp_path), 64, 36, stages=("compose",)))
    assert m["status"] == "complete" and m["stages_completed"] == ["compose"]
    assert (tmp_path / "scene.json").exists()
    assert not (tmp_path / "gt").exists()
    assert not list((tmp_path / "meshes").glob("*"))


def test_profile_at_256x144(tmp_path):
    P.run_pipeline(P.RunConfig("desert", 42, str(tmp_path), 256, 144))
    prof = json.loads((tmp_path / "profile.json").read_text())
    assert prof["triangles"]["total"] > 0 and prof["triangles"]["terrain"] > 0
    parts = sum(prof["stages_s"].values())
    assert abs(parts - prof["total_s"]) <= 0.05 * prof["total_s"]
    assert prof["peak_rss_mb"] > 0 and prof["threads"] >= 1


def test_stage_failure_is_recorded(tmp_path):
    m = P.run_pipeline(P.RunConfig("desert", 1, str(tmp_path), 64, 36, stages=("mesh", "gt")))
    assert m["status"] == "partial" and m["stages_completed"] == []
    assert m["failure"]["stage"] == "mesh" and "FileNotFoundError" in m["failure"]["error"]
    assert json.loads((tmp_path / "manifest.json").read_text()) == m
    assert (tmp_path / "profile.json").exists()


def test_stages_run_separately_match_all(desert_runs, tmp_path):
    base, _ = desert_runs
    for stage in P.STAGES:
        P.run_pipeline(P.RunConfig("desert", 42, str(tmp_path), 64, 36, stages=(stage,)))
    a, b = tree_bytes(base / "a"), tree_bytes(tmp_path)
    for k in a:
        if k not in ("profile.json", "manifest.json"):
            assert a[k] == b[k], k


def test_thread_count_does_not_change_assets(monkeypatch, desert_runs):
    base, _ = desert_runs
    scene = SceneGraph.loads((base / "a" / "scene.json").read_text())
    monkeypatch.setenv(P.THREADS_ENV, "4")
    assert P.thread_count() == 4
    assert IO.ply_bytes(P.mesh_assets(scene, P.thread_count())) == (base / "a" / "meshes" / "assets.ply").read_bytes()
    monkeypatch.setenv(P.THREADS_ENV, "lots")
    assert P.thread_count() == 1


def test_run_config_validation():
    with pytest.raises(ValueError):
        P.RunConfig("desert", 0, "x", 8, 8)
    with pytest.raises(ValueError):
        P.RunConfig("desert", 0, "x", stages=("render",))
    with pytest.raises(ValueError):
        P.RunConfig("desert", 0, "x", mesh_formats=("stl",))
    with pytest.raises(ValueError):
        P.RunConfig("desert", 0, "x", baseline=-1)


# -- command line ------------------------------------------------------------


def test_parse_res():
    assert parse_res("256x144") == (256, 144)
    assert parse_res("64X36") == (64, 36)
    for bad in ("8x8", "256", "axb"):
        with pytest.raises(Exception):
            parse_res(bad)
    with pytest.raises(SystemExit):
        build_parser().parse_args(["all", "--config", "desert", "--res", "8x8", "-o", "x"])


def test_cli_all_with_obj(tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(["all", "--config", "desert", "--seed", "5", "--res", "48x32", "-o", str(out), "--mesh-format", "both"])
    assert rc == 0
    assert "artifacts" in capsys.readouterr().out
    assets = IO.read_ply(out / "meshes" / "assets.ply")
    groups = IO.obj_groups(out / "meshes" / "assets.obj")
    assert len(groups) == len(np.unique(assets.instance_ids))
    back = IO.read_obj(out / "meshes" / "terrain.obj")
    assert np.abs(back.vertices - IO.read_ply(out / "meshes" / "terrain.ply").vertices).max() <= 1e-6
    m = json.loads((out / "manifest.json").read_text())
    assert m["resolution"] == [48, 32] and m["seed"] == 5


def test_cli_compose_to_json_file(tmp_path):
    target = tmp_path / "scene.json"
    assert main(["compose", "--config", "desert", "--seed", "9", "--res", "32x18", "-o", str(target)]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["scene.json"]
    scene = SceneGraph.loads(target.read_text())
    assert scene.seed == 9 and len(scene.cameras) == 1


def test_cli_config_path_and_unknown(tmp_path, capsys):
    cfg = json.loads((P.ST.resources.files("procworld") / "presets" / "scenes" / "desert.json").read_text())
    path = tmp_path / "mine.json"
    path.write_text(json.dumps(cfg))
    assert main(["compose", "--config", str(path), "-o", str(tmp_path / "s.json")]) == 0
    assert main(["all", "--config", "moon", "-o", str(tmp_path / "x")]) == 2
    assert "unknown scene type" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_cli_failure_exit_code(tmp_path, capsys):
    assert main(["gt", "--config", "desert", "-o", str(tmp_path)]) == 1
    assert "stage gt failed" in capsys.readouterr().err


def test_cli_list(capsys):
    assert main(["list"]) == 0
    assert capsys.readouterr().out.split() == ["arctic", "cave", "coast", "desert", "mountain", "river"]


def test_cli_graph_commands(tmp_path, capsys):
    g = tmp_path / "g.json"
    g.write_text(json.dumps(SPHERE_GRAPH))
    assert main(["graph", "eval", str(g), "--at", "3,0,0"]) == 0
    assert capsys.readouterr().out.strip() == "sdf = 2.0"
    src = tmp_path / "g.py"
    assert main(["graph", "compile", str(g), "--emit", str(src)]) == 0
    text = src.read_text()
    assert "def build" in text and "sdf_sphere" in text
    assert main(["graph", "compile", str(g), "--emit", "-"]) == 0
    assert capsys.readouterr().out == text
    assert main(["graph", "sample", str(g), "--seed", "7"]) == 0
    sampled = json.loads(capsys.readouterr().out)
    radius = [n for n in sampled["nodes"] if n["id"] == "s"][0]["inputs"]["radius"]
    assert 0.5 <= radius <= 2.0
    out = tmp_path / "s.json"
    assert main(["graph", "sample", str(g), "--seed", "7", "-o", str(out)]) == 0
    assert json.loads(out.read_text()) == sampled


def test_cli_graph_errors(tmp_path, capsys):
    g = tmp_path / "bad.json"
    g.write_text(json.dumps({"nodes": [{"id": "a", "type": "add", "inputs": {"a": "@a", "b": 1.0}}], "outputs": {"o": "@a"}}))
    assert main(["graph", "eval", str(g), "--at", "0,0,0"]) == 2
    assert re.search(r"error:.*cycle", capsys.readouterr().err)
    with pytest.raises(SystemExit):
        main(["graph", "eval", str(g), "--at", "1,2"])
