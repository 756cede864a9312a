import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from plyfile import PlyData, PlyElement

from splatrecon.splatcore import (
    FeatureMap,
    FormatError,
    Gaussian,
    GaussianSet,
    OrthoCamera,
    SplatError,
    TriMesh,
    ValidationError,
    covariance,
    load_gaussians_ply,
    load_mesh,
    load_tensor,
    quaternion_to_rotmat,
    save_gaussians_ply,
    save_mesh,
    save_tensor,
)
from splatrecon.splatcore.io import GAUSSIAN_PLY_FIELDS
from splatrecon.splatcore.shapes import icosphere, sphere_gaussians, unit_cube
from conftest import DATA_DIR, random_gaussians, random_rotation


def _write_raw_ply(path, **overrides):
    fields = [f for f in GAUSSIAN_PLY_FIELDS if overrides.get(f, 0.0) is not None]
    arr = np.zeros(1, dtype=[(n, "<f4") for n in fields])
    arr["rot_0"] = 1.0
    for k, v in overrides.items():
        if v is not None:
            arr[k] = v
    PlyData([PlyElement.describe(arr, "vertex")]).write(str(path))


def test_load_activates_raw_fields(tmp_path):
    _write_raw_ply(tmp_path / "one.ply")
    g = load_gaussians_ply(tmp_path / "one.ply")
    assert len(g) == 1
    np.testing.assert_allclose(g.scales[0], [1, 1, 1])
    assert g.opacities[0] == pytest.approx(0.5)


def test_missing_attribute(tmp_path):
    _write_raw_ply(tmp_path / "bad.ply", rot_3=None)
    with pytest.raises(FormatError, match="missing attribute rot_3"):
        load_gaussians_ply(tmp_path / "bad.ply")


def test_nan_field_names_index(tmp_path):
    arr = np.zeros(3, dtype=[(n, "<f4") for n in GAUSSIAN_PLY_FIELDS])
    arr["rot_0"] = 1
    arr["scale_1"][2] = np.nan
    PlyData([PlyElement.describe(arr, "vertex")]).write(str(tmp_path / "nan.ply"))
    with pytest.raises(ValidationError, match="index 2"):
        load_gaussians_ply(tmp_path / "nan.ply")


@pytest.mark.parametrize("ascii", [False, True])
def test_gaussian_roundtrip(tmp_path, ascii):
    g = random_gaussians(100, seed=3)
    save_gaussians_ply(g, tmp_path / "g.ply", ascii=ascii)
    h = load_gaussians_ply(tmp_path / "g.ply")
    for a, b in [(g.centers, h.centers), (g.scales, h.scales), (g.rotations, h.rotations),
                 (g.opacities, h.opacities), (g.colors, h.colors)]:
        np.testing.assert_allclose(b, a, rtol=1e-6, atol=1e-6)


def test_saved_ply_has_14_properties(tmp_path):
    save_gaussians_ply(random_gaussians(1), tmp_path / "g.ply")
    ply = PlyData.read(str(tmp_path / "g.ply"))
    assert len(ply["vertex"].properties) == 14


def test_save_empty_set_fails(tmp_path):
    empty = GaussianSet.from_gaussians([])
    with pytest.raises(SplatError, match="empty gaussian set"):
        save_gaussians_ply(empty, tmp_path / "e.ply")


def _header(path):
    blob = path.read_bytes()
    return blob[: blob.index(b"end_header\n") + len(b"end_header\n")]


def test_sphere_fixture_header_is_golden(tmp_path):
    save_gaussians_ply(sphere_gaussians(), tmp_path / "s.ply")
    save_gaussians_ply(load_gaussians_ply(tmp_path / "s.ply"), tmp_path / "s2.ply")
    golden = (DATA_DIR / "sphere_gaussians_header.txt").read_bytes()
    assert _header(tmp_path / "s.ply") == golden
    assert _header(tmp_path / "s2.ply") == golden


def test_unit_cube_obj(tmp_path):
    save_mesh(unit_cube(), tmp_path / "cube.obj")
    m = load_mesh(tmp_path / "cube.obj")
    assert m.n_vertices == 8 and m.n_faces == 12


@pytest.mark.parametrize("suffix", [".obj", ".ply"])
def test_mesh_roundtrip(tmp_path, suffix):
    rng = np.random.default_rng(0)
    m = icosphere(2)
    m = TriMesh(m.vertices + rng.normal(scale=0.01, size=m.vertices.shape), m.faces,
                rng.uniform(size=m.vertices.shape))
    save_mesh(m, tmp_path / f"m{suffix}")
    back = load_mesh(tmp_path / f"m{suffix}")
    np.testing.assert_allclose(back.vertices, m.vertices, rtol=1e-6, atol=1e-12)
    np.testing.assert_array_equal(back.faces, m.faces)
    np.testing.assert_allclose(back.vertex_colors, m.vertex_colors, atol=1e-6)


def test_obj_out_of_range_face(tmp_path):
    (tmp_path / "bad.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
    with pytest.raises(ValidationError, match="out of range"):
        load_mesh(tmp_path / "bad.obj")


def test_obj_malformed_face_reports_line(tmp_path):
    (tmp_path / "bad.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\n# c\nf 1 x 3\n")
    with pytest.raises(FormatError, match=":5:"):
        load_mesh(tmp_path / "bad.obj")


def test_degenerate_face_rejected():
    with pytest.raises(ValidationError, match="degenerate"):
        TriMesh(np.eye(3), [[0, 1, 1]])


def test_zero_area_face_normal_is_flagged_not_nan():
    m = TriMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]], [[0, 1, 2], [0, 1, 3]])
    n, zero = m.face_normals()
    assert zero.tolist() == [True, False]
    assert np.all(np.isfinite(n))
    np.testing.assert_array_equal(n[0], 0)
    np.testing.assert_allclose(n[1], [0, 0, 1])


def test_face_normal_is_normalized_cross():
    rng = np.random.default_rng(1)
    v = rng.normal(size=(3, 3))
    n, _ = TriMesh(v, [[0, 1, 2]]).face_normals()
    c = np.cross(v[1] - v[0], v[2] - v[0])
    np.testing.assert_allclose(n[0], c / np.linalg.norm(c), atol=1e-15)


def test_quaternion_examples():
    np.testing.assert_array_equal(quaternion_to_rotmat([1, 0, 0, 0]), np.eye(3))
    np.testing.assert_array_equal(quaternion_to_rotmat([0, 1, 0, 0]), np.diag([1.0, -1.0, -1.0]))
    with pytest.raises(ValidationError):
        quaternion_to_rotmat([1, 1, 0, 0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_quaternion_rotmat_orthonormal(q):
    q = np.asarray(q) / np.linalg.norm(q)
    r = quaternion_to_rotmat(q)
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-9)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-6)


def test_covariance_examples():
    g = Gaussian([0, 0, 0], [1, 2, 3], [1, 0, 0, 0], 1.0, [0, 0, 0])
    np.testing.assert_allclose(covariance(g), np.diag([1.0, 4.0, 9.0]))


@pytest.mark.parametrize("seed", range(5))
def test_covariance_eigenvalues_are_squared_scales(seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=4)
    s = rng.uniform(0.1, 2.0, 3)
    cov = covariance(Gaussian(rng.normal(size=3), s, q / np.linalg.norm(q), 0.5, [0.2, 0.3, 0.4]))
    np.testing.assert_allclose(cov, cov.T, atol=1e-12)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(cov)), np.sort(s**2), atol=1e-9)


def test_covariance_rotation_equivariant():
    g = random_gaussians(20, seed=7)
    r = random_rotation(np.random.default_rng(8))
    rotated = g.rotated(r)
    np.testing.assert_allclose(rotated.covariances(), r @ g.covariances() @ r.T, atol=1e-9)


def test_gaussian_has_14_attributes():
    g = random_gaussians(1)[0]
    assert g.to_vector().shape == (14,)
    assert np.linalg.norm(g.rotation) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize(
    "kwargs, msg",
    [
        (dict(scale=[1, 0, 1]), "scale"),
        (dict(opacity=1.5), "opacity"),
        (dict(color=[0, 2, 0]), "color"),
        (dict(center=[0, np.nan, 0]), "center"),
    ],
)
def test_gaussian_validation(kwargs, msg):
    base = dict(center=[0, 0, 0], scale=[1, 1, 1], rotation=[1, 0, 0, 0], opacity=0.5, color=[0.5] * 3)
    base.update(kwargs)
    with pytest.raises(ValidationError, match=msg):
        Gaussian(**base)


def test_camera_validation():
    with pytest.raises(ValidationError):
        OrthoCamera(np.diag([1, 1, 2.0]), np.zeros(3), 1, 1, 4, 4)
    with pytest.raises(ValidationError):
        OrthoCamera(np.eye(3), np.zeros(3), 1, 1, 4, 4, near=2, far=1)
    with pytest.raises(ValidationError):
        OrthoCamera(np.eye(3), np.zeros(3), 1, 1, 0, 4)


def test_camera_center_projects_to_center_pixel():
    cam = OrthoCamera.looking_along([0, 0, -1], extent=1.5, size=3)
    px, py, depth = cam.project(np.zeros((1, 3)))
    assert (px[0], py[0]) == (1.5, 1.5)
    assert depth[0] == pytest.approx(10.0)


def test_feature_map_invariants():
    fm = FeatureMap(np.zeros((2, 3, 4)))
    assert fm.shape == (2, 3, 4)
    with pytest.raises(ValidationError):
        FeatureMap(np.full((1, 2, 2), np.inf))


def test_tensor_roundtrip(tmp_path):
    a = np.random.default_rng(0).normal(size=(3, 5, 4, 4))
    save_tensor(a, tmp_path / "t.bin", dtype="<f8")
    np.testing.assert_array_equal(load_tensor(tmp_path / "t.bin"), a)
    save_tensor(a, tmp_path / "t32.bin")
    np.testing.assert_allclose(load_tensor(tmp_path / "t32.bin"), a, rtol=1e-6)
