"""Procedural meshes and Gaussian sets used as fixtures and rig defaults."""

from __future__ import annotations

import numpy as np

from .types import GaussianSet, TriMesh, rotmat_to_quaternion


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> TriMesh:
    """Geodesic sphere; subdivision s gives 10*4**s + 2 vertices."""
    t = (1.0 + 5**0.5) / 2.0
    v = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    f = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.asarray(p, float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriMesh(np.asarray(verts) * radius, np.asarray(faces))


def unit_cube() -> TriMesh:
    """Axis-aligned cube [-0.5, 0.5]^3 with outward-facing triangles."""
    v = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
    f = np.array([
        [0, 1, 3], [0, 3, 2],  # -x
        [4, 6, 7], [4, 7, 5],  # +x
        [0, 4, 5], [0, 5, 1],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [0, 2, 6], [0, 6, 4],  # -z
        [1, 5, 7], [1, 7, 3],  # +z
    ])
    return TriMesh(v, f)


def grid_plane(n: int = 5, spacing: float = 1.0) -> TriMesh:
    """Regular n x n vertex grid in the z=0 plane with a consistent diagonal."""
    xs = np.arange(n) * spacing
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    v = np.stack([gx.ravel(), gy.ravel(), np.zeros(n * n)], axis=1)
    faces = []
    for i in range(n - 1):
        for j in range(n - 1):
            a, b, c, d = i * n + j, (i + 1) * n + j, (i + 1) * n + j + 1, i * n + j + 1
            faces += [(a, b, c), (a, c, d)]
    return TriMesh(v, np.asarray(faces))


def fibonacci_sphere(n: int, radius: float = 1.0) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5**0.5) * i
    return radius * np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)


def sphere_gaussians(
    n: int = 2000,
    radius: float = 1.0,
    tangent_scale: float = 0.06,
    normal_scale: float = 0.03,
    opacity: float = 0.5,
    units: str = "cm",
) -> GaussianSet:
    """Normal-Gaussian avatar of a sphere: flattened Gaussians tangent to the surface.

    Colors encode the outward normal as (n + 1) / 2.
    """
    centers = fibonacci_sphere(n, radius)
    normals = centers / np.linalg.norm(centers, axis=1, keepdims=True)
    quats = np.empty((n, 4))
    for k, nz in enumerate(normals):
        helper = np.array([1.0, 0.0, 0.0]) if abs(nz[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        tx = np.cross(helper, nz)
        tx /= np.linalg.norm(tx)
        ty = np.cross(nz, tx)
        quats[k] = rotmat_to_quaternion(np.stack([tx, ty, nz], axis=1))
    scales = np.tile([tangent_scale, tangent_scale, normal_scale], (n, 1))
    return GaussianSet(centers, scales, quats, np.full(n, opacity), (normals + 1) / 2, units=units)


def remesh_sphere_fixture(n: int = 2000) -> GaussianSet:
    """Unit-sphere normal avatar used by the remeshing checks and the pipeline demo.

    Wide, faint surfels keep the rendered silhouette close to the unit sphere
    while the marching-cubes shell of their density sits noticeably outside it.
    """
    return sphere_gaussians(n, 1.0, tangent_scale=0.15, normal_scale=0.05, opacity=0.03)
