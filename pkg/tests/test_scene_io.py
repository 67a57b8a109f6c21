import json
import os

import numpy as np
import pytest

from fricsim.export import export, read_trajectory_csv, write_trajectory_csv
from fricsim.scene import SceneError, load_scene, load_scene_file
from fricsim.simulate import run_simulation

SCENES = os.path.join(os.path.dirname(__file__), "..", "scenes")

MINIMAL = {
    "duration": 0.02,
    "step": 0.01,
    "meshes": [
        {"name": "tet",
         "generator": {"kind": "box", "size": [0.1, 0.1, 0.1],
                       "divisions": [1, 1, 1]},
         "translate": [0.0, 0.2, 0.0]}
    ],
    "obstacles": [
        {"kind": "half_space", "point": [0, 0, 0], "normal": [0, 1, 0],
         "friction": {"mu_d": 0.3}}
    ],
}


def test_minimal_scene_roundtrips_byte_identically():
    scene = load_scene(json.dumps(MINIMAL))
    dump1 = scene.normalized_dump()
    scene2 = load_scene(dump1)
    dump2 = scene2.normalized_dump()
    assert dump1 == dump2


def test_defaults_echoed_in_normalized_dump():
    scene = load_scene(json.dumps(MINIMAL))
    norm = scene.normalized
    assert norm["gravity"] == [0.0, -9.8, 0.0]
    assert norm["solver"]["kind"] == "direct"
    assert norm["contact"]["kappa"] is not None  # resolved default
    assert norm["integrator"] == "be"


def test_unknown_keys_listed():
    bad = dict(MINIMAL)
    bad["gravty"] = [0, -1, 0]
    bad["stepp"] = 0.1
    with pytest.raises(SceneError) as exc:
        load_scene(json.dumps(bad))
    assert "gravty" in str(exc.value) and "stepp" in str(exc.value)


def test_invalid_poisson_named():
    bad = json.loads(json.dumps(MINIMAL))
    bad["meshes"][0]["material"] = {"poisson_ratio": 0.6}
    with pytest.raises(SceneError, match="poisson_ratio"):
        load_scene(json.dumps(bad))


def test_missing_mesh_file_named():
    bad = json.loads(json.dumps(MINIMAL))
    del bad["meshes"][0]["generator"]
    bad["meshes"][0]["file"] = "no_such_mesh.json"
    with pytest.raises(SceneError, match="no_such_mesh.json"):
        load_scene(json.dumps(bad), base_dir="/tmp")


def test_mesh_file_loading(tmp_path):
    mesh = {"vertices": [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0],
                         [0.0, 0.0, 1.0]],
            "tets": [[0, 1, 2, 3]]}
    mpath = tmp_path / "tet.json"
    mpath.write_text(json.dumps(mesh))
    cfg = json.loads(json.dumps(MINIMAL))
    del cfg["meshes"][0]["generator"]
    cfg["meshes"][0]["file"] = "tet.json"
    scene = load_scene(json.dumps(cfg), base_dir=str(tmp_path))
    assert scene.meshes[0].n_verts == 4


def test_lagged_mode_parsing_and_validation():
    cfg = json.loads(json.dumps(MINIMAL))
    cfg["friction_mode"] = "lagged:3"
    scene = load_scene(json.dumps(cfg))
    assert scene.friction_mode == "lagged"
    assert scene.fixed_point_iters == 3
    cfg["integrator"] = "sdirk2"
    with pytest.raises(SceneError, match="lagged"):
        load_scene(json.dumps(cfg))
    cfg["integrator"] = "be"
    cfg["friction_mode"] = "sticky"
    with pytest.raises(SceneError, match="friction_mode"):
        load_scene(json.dumps(cfg))


def test_unknown_integrator_rejected():
    cfg = json.loads(json.dumps(MINIMAL))
    cfg["integrator"] = "rk4"
    with pytest.raises(SceneError, match="integrator"):
        load_scene(json.dumps(cfg))


def test_shipped_scenes_parse():
    for name in os.listdir(SCENES):
        if name.endswith(".json"):
            load_scene_file(os.path.join(SCENES, name))


def test_csv_roundtrip_exact(tmp_path):
    scene = load_scene(json.dumps(MINIMAL))
    records, snaps, _ = run_simulation(scene)
    path = str(tmp_path / "t.csv")
    write_trajectory_csv(path, records, scene.region_names)
    cols, data = read_trajectory_csv(path)
    assert cols[0] == "time"
    for i, rec in enumerate(records):
        row = rec.row(scene.region_names)
        assert np.array_equal(np.asarray(row, float), data[i])


def test_csv_zero_samples_header_only(tmp_path):
    path = str(tmp_path / "empty.csv")
    write_trajectory_csv(path, [], [])
    cols, data = read_trajectory_csv(path)
    assert cols == ["time", "com_x", "com_y", "com_z", "kinetic", "elastic",
                    "contact_energy", "gravity_potential", "volume_energy",
                    "deepest_gap", "max_slide_speed", "kappa"]
    assert data.shape[0] == 0


def test_export_snapshots_and_manifest(tmp_path):
    cfg = json.loads(json.dumps(MINIMAL))
    cfg["output"] = {"trajectory_every": 1, "snapshot_every": 1}
    scene = load_scene(json.dumps(cfg))
    records, snaps, _ = run_simulation(scene)
    out = str(tmp_path / "out")
    written = export(records, snaps, out, scene=scene)
    objs = [w for w in written if w.endswith(".obj")]
    assert len(objs) == len(snaps)
    n_verts = scene.merged_mesh().n_verts
    for path in objs:
        with open(path) as fh:
            vlines = [ln for ln in fh if ln.startswith("v ")]
        assert len(vlines) == n_verts
    with open(os.path.join(out, "manifest.json")) as fh:
        manifest = json.load(fh)
    assert manifest["config"]["step"] == 0.01
    assert "numpy" in manifest["versions"]


def test_reproducible_csv(tmp_path):
    cfg = json.dumps(MINIMAL)
    outs = []
    for run in range(2):
        scene = load_scene(cfg)
        records, _, _ = run_simulation(scene)
        path = str(tmp_path / f"r{run}.csv")
        write_trajectory_csv(path, records, scene.region_names)
        outs.append(open(path, "rb").read())
    assert outs[0] == outs[1]
