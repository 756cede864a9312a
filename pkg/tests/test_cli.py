import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from splatrecon.cli import ConfigError, load_config, parse_config
from splatrecon.cli.main import build_parser, main
from splatrecon.cli.pipeline import STAGE_CODES
from splatrecon.splatcore import load_gaussians_ply, load_mesh, load_tensor, save_mesh
from splatrecon.splatcore.cameras import make_camera_rig
from splatrecon.splatcore.shapes import icosphere

REPO = Path(__file__).resolve().parents[1]

FAST = {
    "fixture": "sphere",
    "fourier": {"q": 1, "m": 4000, "size": 32},
    "netshell": {"geo_channels": 2, "tex_channels": 2, "base": 8, "attn_width": 8},
    "cameras": {"size": 32},
    "remesh": {"iterations": 4, "grid_res": 16},
    "metrics": {"tau": 0.05, "samples": 2000},
}


def write_cfg(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


# -- config -------------------------------------------------------------------------------------


def test_defaults_cover_every_field():
    cfg = parse_config({})
    assert cfg.remesh.iterations == 200 and cfg.fourier.q == 4 and cfg.metrics.tau == 1.0
    assert cfg.cameras.rig == "ring8" and cfg.paths.out == "out"


def test_example_config_parses():
    cfg = load_config(REPO / "configs" / "example.yaml")
    assert cfg.fixture == "sphere"


@pytest.mark.parametrize("data,key", [({"itrations": 5}, "itrations"), ({"remesh": {"itrations": 5}}, "remesh.itrations")])
def test_unknown_key_is_named(data, key):
    with pytest.raises(ConfigError, match=f"'{key}'"):
        parse_config(data)


@pytest.mark.parametrize(
    "data",
    [{"seed": "x"}, {"fourier": {"size": 48}}, {"cameras": {"rig": "ring4"}}, {"remesh": {"step_size": -1}}, {"fixture": "cube"}],
)
def test_invalid_values(data):
    with pytest.raises(ConfigError):
        parse_config(data)


def test_cli_unknown_key_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"itrations": 3})
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "itrations" in capsys.readouterr().err


def test_global_flags_either_side():
    p = build_parser()
    a = p.parse_args(["--seed", "3", "pipeline"])
    b = p.parse_args(["pipeline", "--seed", "3"])
    assert a.seed == b.seed == 3


# -- rigs -------------------------------------------------------------------------------------


def test_rig_contracts():
    ring = make_camera_rig("ring8", size=8)
    assert np.abs(sum(c.view_direction for c in ring)).max() < 1e-12
    f = [c.view_direction for c in make_camera_rig("front3", size=8)]
    for i in range(3):
        for j in range(i + 1, 3):
            assert abs(f[i] @ f[j]) < 1e-12


# -- pipeline -------------------------------------------------------------------------------------


def test_pipeline_sphere_fixture_and_cache(tmp_path, capsys):
    cfg = write_cfg(tmp_path, FAST)
    out = tmp_path / "run"
    assert main(["pipeline", "--config", str(cfg), "--out", str(out)]) == 0
    for name in ("stack.bin", "pred_c.ply", "pred_n.ply", "refined.obj", "report.json"):
        assert (out / name).exists(), name
    report = json.loads((out / "report.json").read_text())
    assert report["remesh"]["wall_ms"] is None
    assert set(report["metrics"]) == {"cd_p_to_s", "cd_s_to_p", "nc", "fscore", "tau"}
    man = json.loads((out / "manifests" / "remesh.json").read_text())
    assert {"key", "params", "inputs", "outputs", "wall_ms", "seed"} <= set(man)
    assert load_tensor(out / "stack.bin").shape == (3, 9, 32, 32)
    assert len(load_gaussians_ply(out / "pred_n.ply")) > 0
    capsys.readouterr()

    assert main(["pipeline", "--config", str(cfg), "--out", str(out)]) == 0
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("stage ")]
    assert lines and all(ln.endswith("skipped (cached)") for ln in lines)


def test_pipeline_reruns_changed_stage_only(tmp_path, capsys):
    data = dict(FAST)
    cfg = write_cfg(tmp_path, data)
    out = tmp_path / "run"
    main(["pipeline", "--config", str(cfg), "--out", str(out)])
    capsys.readouterr()
    data = {**FAST, "metrics": {"tau": 0.1, "samples": 2000}}
    cfg = write_cfg(tmp_path, data)
    main(["pipeline", "--config", str(cfg), "--out", str(out)])
    status = dict(ln[len("stage "):].split(": ") for ln in capsys.readouterr().out.splitlines() if ln.startswith("stage "))
    assert status["remesh"] == "skipped (cached)"
    assert status["eval"] == "ran" and status["report"] == "ran"


def test_stage_failure_exit_code(tmp_path):
    bad_mesh = tmp_path / "bad.obj"
    bad_mesh.write_text("v 0 0 0\nv 1 0 0\nf 1 2 3\n")
    cfg = write_cfg(tmp_path, {**FAST, "fixture": None, "paths": {"mesh": str(bad_mesh), "splat": "missing.ply"}})
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "o")]) == STAGE_CODES["encode"]


# -- subcommands ---------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def fixture_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("fx")
    cfg = write_cfg(tmp, FAST)
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp / "run")]) == 0
    return tmp / "run"


def test_encode_run_round(fixture_run, tmp_path):
    s, t = tmp_path / "s.bin", tmp_path / "t.bin"
    assert main(["encode", "--mesh", str(fixture_run / "inputs" / "body.obj"), "--order", "1", "--points", "3000",
                 "--size", "32", "--out", str(s)]) == 0
    assert (tmp_path / "s.bin.manifest.json").exists() and (tmp_path / "s.cameras.json").exists()
    assert main(["encode", "--image", str(fixture_run / "front.png"), "--stack", str(s),
                 "--weights", str(fixture_run / "weights.nsw"), "--out", str(t)]) == 0
    pattern = str(tmp_path / "pred_{c,n}.ply")
    assert main(["netshell", "run", "--geo", str(s), "--tex", str(t), "--weights", str(fixture_run / "weights.nsw"),
                 "--out-splats", pattern]) == 0
    assert (tmp_path / "pred_c.ply").exists() and (tmp_path / "pred_n.ply").exists()
    assert main(["run", "--geo", str(s), "--tex", str(t), "--weights", str(fixture_run / "weights.nsw"),
                 "--out-splats", str(tmp_path / "a.ply"), str(tmp_path / "b.ply")]) == 0


def test_remesh_and_eval_commands(fixture_run, tmp_path):
    out, rep = tmp_path / "r.obj", tmp_path / "r.json"
    assert main(["remesh", "--splat", str(fixture_run / "inputs" / "avatar.ply"), "--views", "8", "--res", "32",
                 "--iters", "3", "--out", str(out), "--report", str(rep)]) == 0
    r = json.loads(rep.read_text())
    assert {"iterations", "wall_ms", "verts_before", "verts_after"} <= set(r)
    assert set(r["iterations"][0]) == {"normal", "mask", "lap", "total"}
    assert load_mesh(out).n_faces > 0

    gj = tmp_path / "g.json"
    assert main(["eval", "geometry", "--pred", str(out), "--gt", str(fixture_run / "inputs" / "gt.obj"),
                 "--tau", "0.1", "--samples", "2000", "--out", str(gj)]) == 0
    assert set(json.loads(gj.read_text())) == {"cd_p_to_s", "cd_s_to_p", "nc", "fscore", "tau"}
    ij = tmp_path / "i.json"
    assert main(["eval", "image", "--pred", str(fixture_run / "front.png"), "--gt", str(fixture_run / "front.png"),
                 "--out", str(ij)]) == 0
    assert json.loads(ij.read_text()) == {"psnr_db": 99.0, "ssim": 1.0}


def test_render_command(tmp_path):
    mesh = tmp_path / "m.obj"
    save_mesh(icosphere(2), mesh)
    out = tmp_path / "views"
    assert main(["render", "--mesh", str(mesh), "--rig", "front3", "--size", "16", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.glob("view_*.png")) == ["view_0.png", "view_1.png", "view_2.png"]
    assert (out / "manifest.json").exists()


def test_run_bad_splat_pattern(tmp_path, capsys):
    code = main(["run", "--geo", "a", "--tex", "b", "--weights", "c", "--out-splats", str(tmp_path / "x.ply")])
    assert code == 2
