import logging

import numpy as np
import pytest

from splatrecon.rasterizer import render_mesh
from splatrecon.remesh import (
    RemeshConfig,
    RemeshError,
    ViewTarget,
    _Objective,
    density_field,
    init_coarse_mesh,
    laplacian_energy,
    refine,
    remesh,
    signed_volume,
    umbrella_deltas,
    umbrella_operator,
)
from splatrecon.splatcore import GaussianSet, OrthoCamera, TriMesh, ValidationError
from splatrecon.splatcore.cameras import make_camera_rig
from splatrecon.splatcore.shapes import fibonacci_sphere, grid_plane, icosphere
from conftest import random_gaussians
from test_rasterizer import hull_mesh


def iso_gaussian(center=(0, 0, 0), sigma=0.2, opacity=0.7):
    return GaussianSet([center], [[sigma] * 3], [[1, 0, 0, 0]], [opacity], [[0.5] * 3])


def brute_density(gs, axes):
    """Every lattice point against every Gaussian, masked to the 3-sigma box."""
    x, y, z = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([x, y, z], axis=-1)
    out = np.zeros(x.shape)
    cov = gs.covariances()
    for g in range(len(gs)):
        d = pts - gs.centers[g]
        q = np.einsum("...i,ij,...j->...", d, np.linalg.inv(cov[g]), d)
        half = 3 * np.sqrt(np.diag(cov[g]))
        inside = (np.abs(d) <= half).all(axis=-1)
        out += np.where(inside, gs.opacities[g] * np.exp(-0.5 * q), 0.0)
    return out


# -- density_field ------------------------------------------------------------------


def test_single_gaussian_center_and_one_sigma():
    grid = density_field(iso_gaussian(), 21, ([-1, -1, -1], [1, 1, 1]))
    assert grid[10, 10, 10] == pytest.approx(0.7, abs=1e-15)
    assert grid[12, 10, 10] == pytest.approx(0.7 * np.exp(-0.5), rel=1e-12)
    assert grid[10, 8, 10] == pytest.approx(0.7 * np.exp(-0.5), rel=1e-12)


def test_distant_gaussians_do_not_interact():
    a = iso_gaussian((-0.6, 0, 0), 0.1)
    b = iso_gaussian((0.6, 0, 0), 0.1)
    both = GaussianSet(
        np.concatenate([a.centers, b.centers]), np.concatenate([a.scales, b.scales]),
        np.concatenate([a.rotations, b.rotations]), np.concatenate([a.opacities, b.opacities]),
        np.concatenate([a.colors, b.colors]),
    )
    bounds = ([-1, -1, -1], [1, 1, 1])
    g = density_field(both, 41, bounds)
    ga = density_field(a, 41, bounds)
    np.testing.assert_allclose(g[:20], ga[:20], atol=1e-6)


def test_density_matches_brute_force_and_bound():
    gs = random_gaussians(25, seed=3, spread=0.6)
    bounds = ([-1, -1, -1], [1, 1, 1])
    grid = density_field(gs, 17, bounds)
    axes = [np.linspace(-1, 1, 17)] * 3
    np.testing.assert_allclose(grid, brute_density(gs, axes), rtol=1e-12, atol=1e-15)
    assert grid.max() <= gs.opacities.sum()


def test_density_errors():
    with pytest.raises(ValidationError):
        density_field(iso_gaussian(), 16, ([0, 0, 0], [1, 0, 1]))
    with pytest.raises(ValidationError):
        density_field(iso_gaussian(), 16, ([0, 0, 0], [np.nan, 1, 1]))


# -- init_coarse_mesh -----------------------------------------------------------------


def test_isotropic_sphere_init_radius():
    pts = fibonacci_sphere(2000)
    gs = GaussianSet(pts, np.full((2000, 3), 0.04), np.tile([1, 0, 0, 0], (2000, 1)), np.full(2000, 0.5), np.full((2000, 3), 0.5))
    mesh = init_coarse_mesh(gs, RemeshConfig(grid_res=64))
    r = np.linalg.norm(mesh.vertices, axis=1)
    assert (np.abs(r - 1) < 0.1).mean() >= 0.95
    assert mesh.euler_characteristic() == 2
    assert signed_volume(mesh) > 0


def test_single_gaussian_gives_closed_ellipsoid():
    gs = GaussianSet([[0.1, 0, 0]], [[0.2, 0.3, 0.1]], [[1, 0, 0, 0]], [1.0], [[1, 1, 1]])
    mesh = init_coarse_mesh(gs, RemeshConfig(grid_res=32))
    assert mesh.euler_characteristic() == 2
    # Iso-surface of exp(-q/2) at 0.3 is the ellipsoid scaled by sqrt(2 ln(1/0.3)).
    k = np.sqrt(2 * np.log(1 / 0.3))
    assert signed_volume(mesh) == pytest.approx(4 / 3 * np.pi * 0.2 * 0.3 * 0.1 * k**3, rel=0.03)


def test_iso_level_above_max():
    with pytest.raises(RemeshError, match="try iso_level"):
        init_coarse_mesh(iso_gaussian(opacity=0.5), RemeshConfig(iso_level=0.6))


# -- Laplacian -----------------------------------------------------------------------


def test_planar_grid_interior_is_exactly_zero():
    mesh = grid_plane(7, spacing=1.0)
    delta = umbrella_deltas(mesh.vertices, umbrella_operator(mesh))
    _, deg = umbrella_operator(mesh)
    # Interior vertices of the regular triangulated grid have six neighbours.
    interior = deg == 6
    assert interior.sum() == 25
    assert (delta[interior] == 0).all()


def test_icosahedron_deltas_equal():
    mesh = icosphere(0)
    delta = umbrella_deltas(mesh.vertices, umbrella_operator(mesh))
    mags = np.linalg.norm(delta, axis=1)
    assert mags.max() - mags.min() < 1e-6


def test_laplacian_gradient_matches_finite_differences():
    mesh = hull_mesh(50, seed=4)
    energy, grad = laplacian_energy(mesh)
    fd = np.zeros_like(grad)
    h = 1e-6
    for i in range(mesh.n_vertices):
        for k in range(3):
            vp, vm = mesh.vertices.copy(), mesh.vertices.copy()
            vp[i, k] += h
            vm[i, k] -= h
            fd[i, k] = (laplacian_energy(mesh.with_vertices(vp))[0] - laplacian_energy(mesh.with_vertices(vm))[0]) / (2 * h)
    rel = np.abs(fd - grad) / np.maximum(np.abs(grad), 1e-12)
    assert rel.max() < 1e-6
    assert energy > 0


def test_isolated_vertex_excluded(caplog):
    tri = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]], [[0, 1, 2]])
    with caplog.at_level(logging.WARNING):
        energy, grad = laplacian_energy(tri)
    ref, _ = laplacian_energy(TriMesh(tri.vertices[:3], tri.faces))
    assert energy == pytest.approx(ref)
    assert (grad[3] == 0).all()
    assert "count=1" in caplog.text


# -- refinement ------------------------------------------------------------------------


def mesh_targets(mesh, views, cfg):
    out = []
    for cam in views:
        r = render_mesh(mesh, cam, cfg.render)
        out.append(ViewTarget(cam, r.image, r.alpha[0]))
    return out


@pytest.fixture(scope="module")
def small_case():
    views = make_camera_rig("ring8", size=32, extent=1.1)
    mesh = hull_mesh(40, seed=2)
    target = TriMesh(hull_mesh(40, seed=5).vertices * 1.1, hull_mesh(40, seed=5).faces)
    return views, mesh, target


def test_self_supervision_is_a_fixed_point(small_case):
    views, mesh, _ = small_case
    cfg = RemeshConfig(lambda_lap=0.0, iterations=20)
    out, rep = refine(mesh, mesh_targets(mesh, views, cfg), cfg)
    assert abs(rep.final["total"] - rep.iterations[0]["total"]) < 1e-6
    assert np.abs(out.vertices - mesh.vertices).max() < 1e-4


def test_accepted_losses_monotone_and_decrease(small_case):
    views, mesh, target = small_case
    cfg = RemeshConfig(iterations=40)
    out, rep = refine(mesh, mesh_targets(target, views, cfg), cfg)
    totals = [it["total"] for it in rep.iterations]
    assert all(b <= a for a, b in zip(totals, totals[1:]))
    assert totals[-1] < totals[0]
    assert rep.n_accepted + rep.n_rejected == rep.n_iterations
    assert rep.verts_before == rep.verts_after == mesh.n_vertices


def test_strong_laplacian_smooths(small_case):
    views, mesh, target = small_case
    cfg = RemeshConfig(iterations=30, lambda_lap=1e3, step_size=1e-4)
    out, _ = refine(mesh, mesh_targets(target, views, cfg), cfg)
    assert laplacian_energy(out)[0] < laplacian_energy(mesh)[0]


def test_zero_weights_return_mesh_unchanged(small_case):
    views, mesh, target = small_case
    cfg = RemeshConfig(lambda_normal=0, lambda_mask=0, lambda_lap=0, iterations=5)
    out, rep = refine(mesh, mesh_targets(target, views, cfg), cfg)
    assert out is mesh
    assert rep.n_iterations == 0


def test_view_gradients_are_additive(small_case):
    views, mesh, target = small_case
    cfg = RemeshConfig(lambda_lap=0.0)
    targets = mesh_targets(target, views, cfg)
    _, total = _Objective(mesh.faces, targets, cfg, mesh)(mesh.vertices)
    parts = sum(_Objective(mesh.faces, [t], cfg, mesh)(mesh.vertices)[1] for t in targets)
    np.testing.assert_allclose(total, parts, rtol=0, atol=1e-10)


def test_threaded_views_match_sequential(small_case):
    views, mesh, target = small_case
    cfg1 = RemeshConfig(iterations=5)
    cfg2 = RemeshConfig(iterations=5, threads=3)
    a, _ = refine(mesh, mesh_targets(target, views, cfg1), cfg1)
    b, _ = refine(mesh, mesh_targets(target, views, cfg2), cfg2)
    assert np.array_equal(a.vertices, b.vertices)


def test_nan_loss_aborts(small_case):
    views, mesh, target = small_case
    cfg = RemeshConfig(iterations=3)
    targets = mesh_targets(target, views, cfg)
    targets[0].normal[:] = np.nan
    with pytest.raises(RemeshError, match="iteration 0"):
        refine(mesh, targets, cfg)


def test_remesh_end_to_end_is_deterministic():
    from splatrecon.splatcore.shapes import sphere_gaussians

    gs = sphere_gaussians(600, tangent_scale=0.12, normal_scale=0.05)
    cfg = RemeshConfig(iterations=8, render_size=32, grid_res=16)
    a, rep = remesh(gs, cfg)
    b, _ = remesh(gs, cfg)
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.faces, b.faces)
    d = rep.to_dict(include_wall=False)
    assert d["wall_ms"] is None
    assert set(d["iterations"][0]) == {"normal", "mask", "lap", "total"}


def test_empty_view_rejected():
    gs = iso_gaussian((0, 0, 0), 0.05)
    far = OrthoCamera.looking_along([0, 0, -1], center=[50, 0, 0], extent=1.0, size=16)
    with pytest.raises(RemeshError, match="view 0"):
        remesh(gs, RemeshConfig(views=[far]))


@pytest.mark.parametrize(
    "kw", [dict(iterations=0), dict(step_size=0), dict(grid_res=7), dict(lambda_mask=-1), dict(iso_fraction=1.5)]
)
def test_config_validation(kw):
    with pytest.raises(ValidationError):
        RemeshConfig(**kw)
