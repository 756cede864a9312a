"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line in ``RESULTS``; conftest prints them in the
terminal summary. Run ``python tests/test_acceptance.py`` to print them
directly without pytest.
"""

import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

sys.path.insert(0, str(Path(__file__).parent))

from conftest import DATA_DIR, random_gaussians  # noqa: E402
from test_fourier import analytic_box_mask, box_surface_points  # noqa: E402
from test_netshell import ref_unet  # noqa: E402
from test_rasterizer import finite_difference_check, hull_mesh, relative_errors  # noqa: E402

from splatrecon.cli.main import main as cli_main  # noqa: E402
from splatrecon.fourier import (  # noqa: E402
    FourierCloud,
    build_fourier_stack,
    feature_length,
    fourier_expand,
    plucker_map,
    project_features_with_stats,
)
from splatrecon.metrics import chamfer, f_score, psnr, sample_surface, ssim  # noqa: E402
from splatrecon.netshell import (  # noqa: E402
    DualUNetWeights,
    attention,
    dual_unet_forward,
    init_attn_block,
    init_branch,
    rsem_block,
    single_branch_forward,
)
from splatrecon.rasterizer import SoftRenderConfig, render_mesh  # noqa: E402
from splatrecon.remesh import (  # noqa: E402
    RemeshConfig,
    default_views,
    init_coarse_mesh,
    laplacian_energy,
    refine,
    render_targets,
    umbrella_deltas,
    umbrella_operator,
)
from splatrecon.splatcore import (  # noqa: E402
    OrthoCamera,
    TriMesh,
    load_gaussians_ply,
    load_mesh,
    save_gaussians_ply,
    save_mesh,
)
from splatrecon.splatcore.cameras import make_camera_rig  # noqa: E402
from splatrecon.splatcore.shapes import (  # noqa: E402
    fibonacci_sphere,
    grid_plane,
    icosphere,
    remesh_sphere_fixture,
    sphere_gaussians,
)

RESULTS: dict = {}


def record(n: int, title: str, ok: bool, detail: str) -> None:
    RESULTS[n] = f"acceptance {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    print(RESULTS[n])
    assert ok, RESULTS[n]


def test_01_fourier_encoder():
    rng = np.random.default_rng(0)
    p = rng.uniform(-3, 3, (1000, 3))
    t0 = time.perf_counter()
    exact, worst = True, 0.0
    for q in (0, 1, 4):
        f = fourier_expand(p, q).features
        exact &= f.shape == (1000, feature_length(q)) and np.array_equal(f[:, :3], p)
        for n in range(q):
            cos, sin = f[:, 3 + 6 * n:6 + 6 * n], f[:, 6 + 6 * n:9 + 6 * n]
            worst = max(worst, float(np.abs(cos**2 + sin**2 - 1).max()))
    wall = time.perf_counter() - t0
    record(1, "Fourier encoder", bool(exact) and worst < 1e-6 and wall < 1.0,
           f"order-0 exact={exact} max|cos^2+sin^2-1|={worst:.1e} wall={wall:.3f}s")


def test_02_projection_stack():
    size, q = 128, 4
    t0 = time.perf_counter()
    cloud = fourier_expand(box_surface_points(), q)
    cams = make_camera_rig("front3", size=size, extent=1.0)
    stack = build_fourier_stack(cloud, cams)
    wall = time.perf_counter() - t0
    shapes_ok = len(stack.maps) == 3 and all(fm.shape == (3 * (2 * q + 1), size, size) for fm in stack.maps)
    masks_ok = all(np.array_equal(np.abs(fm.data).sum(axis=0) > 0, analytic_box_mask(c)) for fm, c in zip(stack.maps, cams))

    cam = OrthoCamera(np.eye(3), [0, 0, 0], 1, 1, 4, 4, 0, 10)
    hand = FourierCloud(np.array([[0.1, 0.1, -2.0], [0.1, 0.1, -1.0]]), np.array([[2.0], [1.0]]), None)
    fm, mask, _ = project_features_with_stats(hand, cam)
    zbuf_ok = fm.data[0][mask].tolist() == [1.0]
    record(2, "projection stack", shapes_ok and masks_ok and zbuf_ok and wall < 5.0,
           f"shapes={shapes_ok} silhouettes={masks_ok} zbuffer_nearest={zbuf_ok} wall={wall:.2f}s at {size}^2")


def test_03_plucker_validity():
    worst_dm, worst_norm = 0.0, 0.0
    for view in ([0, 0, -1], [0.3, -0.2, -1], [1, 1, 1]):
        cam = OrthoCamera.looking_along(view, extent=1.3, size=512, center=[0.2, -0.1, 0.4])
        pm = plucker_map(cam).data
        worst_dm = max(worst_dm, float(np.abs((pm[:3] * pm[3:]).sum(axis=0)).max()))
        worst_norm = max(worst_norm, float(np.abs(np.linalg.norm(pm[:3], axis=0) - 1).max()))
    record(3, "Plucker validity", worst_dm < 1e-9 and worst_norm < 1e-9,
           f"max|d.m|={worst_dm:.1e} max||d|-1|={worst_norm:.1e} at 512^2")


def test_04_rasterizer_gradients():
    mesh = hull_mesh(20, seed=0)
    assert mesh.n_vertices == 20
    cam = OrthoCamera.looking_along([0.3, -0.4, -1], extent=1.0, size=32)
    tgt = hull_mesh(20, seed=1)
    target = render_mesh(TriMesh(tgt.vertices * 1.1, tgt.faces), cam)
    t0 = time.perf_counter()
    rows = finite_difference_check(mesh, cam, SoftRenderConfig(), target, h=1e-4)
    wall = time.perf_counter() - t0
    en = relative_errors(rows[:, 0], rows[:, 1]).max()
    em = relative_errors(rows[:, 2], rows[:, 3]).max()
    ok = len(rows) >= 30 and en < 1e-3 and em < 1e-3 and wall < 30
    record(4, "rasterizer gradients", ok,
           f"coords checked={len(rows)}/60 rel_err normal={en:.1e} mask={em:.1e} wall={wall:.1f}s")


def _sphere_chamfer(mesh: TriMesh, n: int = 20000) -> float:
    pts, _ = sample_surface(mesh, n, seed=0)
    a, b = chamfer(pts, fibonacci_sphere(n))
    return a + b


def test_05_remesh_convergence():
    gs = remesh_sphere_fixture()
    cfg = RemeshConfig(iterations=200, render_size=64)
    t0 = time.perf_counter()
    views = default_views(gs, cfg.render_size)
    assert len(views) == 8
    targets = render_targets(gs, views, cfg.render)
    coarse = init_coarse_mesh(gs, cfg)
    refined, report = refine(coarse, targets, cfg)
    wall = time.perf_counter() - t0
    totals = np.array([it["total"] for it in report.iterations])
    monotone = bool((np.diff(totals) <= 0).all())
    before, after = _sphere_chamfer(coarse), _sphere_chamfer(refined)
    gain = 1 - after / before
    record(5, "remesh convergence", len(gs) == 2000 and monotone and gain >= 0.30 and wall < 60,
           f"monotone={monotone} chamfer {before:.4f}->{after:.4f} ({100 * gain:.0f}% better) "
           f"accepted={report.n_accepted} wall={wall:.1f}s")


def test_06_laplacian():
    mesh = hull_mesh(50, seed=4)
    _, grad = laplacian_energy(mesh)
    h = 1e-6
    fd = np.zeros_like(grad)
    for i in range(mesh.n_vertices):
        for k in range(3):
            vp, vm = mesh.vertices.copy(), mesh.vertices.copy()
            vp[i, k] += h
            vm[i, k] -= h
            fd[i, k] = (laplacian_energy(mesh.with_vertices(vp))[0] - laplacian_energy(mesh.with_vertices(vm))[0]) / (2 * h)
    rel = float((np.abs(fd - grad) / np.maximum(np.abs(grad), 1e-12)).max())
    plane = grid_plane(7, spacing=1.0)
    op = umbrella_operator(plane)
    interior = op[1] == 6
    flat = bool((umbrella_deltas(plane.vertices, op)[interior] == 0).all()) and interior.sum() == 25
    record(6, "Laplacian regularizer", rel < 1e-6 and flat,
           f"max rel FD error={rel:.1e} planar interior exactly zero={flat}")


def test_07_dual_unet_wiring():
    rng = np.random.default_rng(12)
    geo, tex = rng.normal(size=(3, 8, 64, 64)), rng.normal(size=(8, 64, 64))
    c_in = 3 * 8 + 8
    tb = init_branch(c_in, base=32, seed=1)
    nb = init_branch(c_in, base=32, seed=2, bias=False).scaled(0.0)
    t0 = time.perf_counter()
    out_c, _ = dual_unet_forward(geo, tex, DualUNetWeights(tb, nb))
    br = init_branch(c_in, base=32, seed=3)
    a, b = dual_unet_forward(geo, tex, DualUNetWeights(br, br))
    wall = time.perf_counter() - t0
    x = np.concatenate([geo.reshape(24, 64, 64), tex])
    err_ref = float(np.abs(out_c - ref_unet(x, tb)).max())
    err_single = float(np.abs(out_c - single_branch_forward(x, tb)).max())
    sym = a.tobytes() == b.tobytes()
    record(7, "dual U-Net wiring", err_ref < 1e-6 and err_single < 1e-6 and sym and wall < 10,
           f"zero-normal vs oracle={err_ref:.1e} vs single-branch={err_single:.1e} "
           f"byte-identical={sym} wall={wall:.2f}s at 64^2 base 32")


def test_08_attention_invariants():
    rng = np.random.default_rng(0)
    w = init_attn_block(64, n_layers=2, seed=5)
    worst_row = 0.0
    for scale in (1e-3, 1.0, 1e3):
        q, k = rng.normal(size=(5, 64)) * scale, rng.normal(size=(9, 64)) * scale
        _, scores = attention(q, k, k, w.layers[0].self_attn, return_scores=True)
        worst_row = max(worst_row, float(np.abs(scores.sum(axis=1) - 1).max()))
    head, body = rng.normal(size=(1, 64)), rng.normal(size=(20, 64))
    ref = rsem_block(head, body, w)
    perm = float(np.abs(rsem_block(head, body[rng.permutation(20)], w) - ref).max())
    dup = float(np.abs(rsem_block(head, np.concatenate([body, body]), w) - ref).max())
    record(8, "attention invariants", worst_row < 1e-6 and perm < 1e-6 and dup < 1e-6,
           f"max|row sum-1|={worst_row:.1e} permutation={perm:.1e} duplication={dup:.1e}")


def test_09_metric_oracles():
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=(100, 3)), rng.normal(size=(100, 3))
    bitexact = chamfer(a, b) == chamfer(a, b, brute_force=True)
    f = f_score([[0, 0, 0], [0.5, 0, 0], [2, 0, 0]], [[0, 0, 0]], tau=1.0)
    img = np.full((3, 16, 16), 0.5)
    p = psnr(img, img + 0.1)
    s = ssim(rng.random((3, 32, 32)), rng.random((3, 32, 32)))
    same = rng.random((3, 32, 32))
    s_same = ssim(same, same)
    ok = bitexact and abs(f - 0.8) < 1e-15 and abs(p - 20.0) < 1e-6 and s_same == 1.0 and s < 1.0
    record(9, "metric oracles", ok,
           f"chamfer bit-exact={bitexact} F={f!r} PSNR={p:.9f} dB SSIM(a,a)={s_same!r}")


def test_10_io_round_trips(tmp_path):
    g = random_gaussians(500, seed=10)
    worst = 0.0
    for ascii in (False, True):
        save_gaussians_ply(g, tmp_path / "g.ply", ascii=ascii)
        h = load_gaussians_ply(tmp_path / "g.ply")
        for x, y in [(g.centers, h.centers), (g.scales, h.scales), (g.rotations, h.rotations),
                     (g.opacities, h.opacities), (g.colors, h.colors)]:
            worst = max(worst, float((np.abs(x - y) / np.maximum(1, np.abs(x))).max()))
    rng = np.random.default_rng(10)
    m = icosphere(2)
    m = TriMesh(m.vertices + rng.normal(scale=0.01, size=m.vertices.shape), m.faces, rng.uniform(size=m.vertices.shape))
    faces_ok = True
    for suffix in (".obj", ".ply"):
        save_mesh(m, tmp_path / f"m{suffix}")
        back = load_mesh(tmp_path / f"m{suffix}")
        worst = max(worst, float(np.abs(back.vertices - m.vertices).max()), float(np.abs(back.vertex_colors - m.vertex_colors).max()))
        faces_ok &= np.array_equal(back.faces, m.faces)
    save_gaussians_ply(sphere_gaussians(), tmp_path / "s.ply")
    blob = (tmp_path / "s.ply").read_bytes()
    header = blob[: blob.index(b"end_header\n") + len(b"end_header\n")]
    golden = header == (DATA_DIR / "sphere_gaussians_header.txt").read_bytes()
    record(10, "I/O round-trips", worst < 1e-6 and faces_ok and golden,
           f"max round-trip error={worst:.1e} faces exact={faces_ok} golden header={golden}")


def test_11_pipeline_determinism(tmp_path, capsys):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({"fixture": "sphere", "seed": 7, "metrics": {"tau": 0.05}}))
    codes, blobs = [], []
    t0 = time.perf_counter()
    for run in ("a", "b"):
        out = tmp_path / run
        codes.append(cli_main(["pipeline", "--config", str(cfg), "--out", str(out)]))
        blobs.append(((out / "refined.obj").read_bytes(), (out / "report.json").read_bytes()))
    wall = time.perf_counter() - t0
    capsys.readouterr()
    same_mesh = blobs[0][0] == blobs[1][0]
    same_report = blobs[0][1] == blobs[1][1]
    seed_ok = json.loads(blobs[0][1])["seed"] == 7
    record(11, "pipeline determinism", codes == [0, 0] and same_mesh and same_report and seed_ok,
           f"exit codes={codes} refined.obj identical={same_mesh} report.json identical={same_report} "
           f"wall={wall:.1f}s for two runs")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
