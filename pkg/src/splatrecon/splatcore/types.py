"""Core data model: Gaussians, triangle meshes, orthographic cameras, feature maps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

ATTRIBUTES_PER_GAUSSIAN = 14
_QUAT_TOL = 1e-6


class SplatError(Exception):
    """Base class for errors raised by this package."""


class FormatError(SplatError):
    """A file is missing required content or cannot be parsed."""


class ValidationError(SplatError):
    """A value violates a data-model invariant."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def quaternion_to_rotmat(q: Sequence[float]) -> np.ndarray:
    """Rotation matrix of a unit quaternion given as (w, x, y, z)."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise ValidationError(f"quaternion must have 4 components, got shape {q.shape}")
    n = np.linalg.norm(q)
    if abs(n - 1.0) > _QUAT_TOL:
        raise ValidationError(f"quaternion is not unit length (norm {n:.9g})")
    return quaternions_to_rotmats(q[None])[0]


def quaternions_to_rotmats(q: np.ndarray) -> np.ndarray:
    """Batched version of :func:`quaternion_to_rotmat` without the norm check. (N,4) -> (N,3,3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r = np.empty((q.shape[0], 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def rotmat_to_quaternion(r: np.ndarray) -> np.ndarray:
    """Inverse of :func:`quaternion_to_rotmat`, returning w >= 0."""
    r = np.asarray(r, dtype=np.float64)
    tr = np.trace(r)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif r[1, 1] > r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


@dataclass(frozen=True)
class Gaussian:
    """A single anisotropic 3D Gaussian with 14 scalar attributes."""

    center: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    color: np.ndarray

    def __post_init__(self) -> None:
        gs = GaussianSet.from_arrays(
            np.asarray(self.center, float)[None],
            np.asarray(self.scale, float)[None],
            np.asarray(self.rotation, float)[None],
            np.asarray([self.opacity], float),
            np.asarray(self.color, float)[None],
        )
        object.__setattr__(self, "center", gs.centers[0])
        object.__setattr__(self, "scale", gs.scales[0])
        object.__setattr__(self, "rotation", gs.rotations[0])
        object.__setattr__(self, "opacity", float(gs.opacities[0]))
        object.__setattr__(self, "color", gs.colors[0])

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.center, self.scale, self.rotation, [self.opacity], self.color]
        )


def covariance(g: Gaussian) -> np.ndarray:
    """World-space covariance R diag(s^2) R^T of one Gaussian."""
    r = quaternion_to_rotmat(g.rotation)
    return (r * g.scale**2) @ r.T


class GaussianSet:
    """Ordered collection of Gaussians stored as parallel arrays.

    Scales and opacities are kept in linear (activated) space; the log / logit
    encodings only exist at the PLY boundary. Quaternions are normalised on
    construction. Arrays are read-only.
    """

    def __init__(
        self,
        centers: np.ndarray,
        scales: np.ndarray,
        rotations: np.ndarray,
        opacities: np.ndarray,
        colors: np.ndarray,
        units: str = "cm",
    ) -> None:
        centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
        n = centers.shape[0]
        scales = np.asarray(scales, dtype=np.float64).reshape(n, 3)
        rotations = np.asarray(rotations, dtype=np.float64).reshape(n, 4)
        opacities = np.asarray(opacities, dtype=np.float64).reshape(n)
        colors = np.asarray(colors, dtype=np.float64).reshape(n, 3)

        fields = {
            "center": centers,
            "scale": scales,
            "rotation": rotations,
            "opacity": opacities[:, None],
            "color": colors,
        }
        for name, arr in fields.items():
            bad = ~np.isfinite(arr).all(axis=1)
            if bad.any():
                raise ValidationError(f"non-finite {name} at gaussian index {int(np.argmax(bad))}")
        bad = ~(scales > 0).all(axis=1)
        if bad.any():
            raise ValidationError(f"non-positive scale at gaussian index {int(np.argmax(bad))}")
        qn = np.linalg.norm(rotations, axis=1)
        bad = qn < 1e-12
        if bad.any():
            raise ValidationError(f"zero quaternion at gaussian index {int(np.argmax(bad))}")
        rotations = rotations / qn[:, None]
        bad = (opacities < 0) | (opacities > 1)
        if bad.any():
            raise ValidationError(f"opacity outside [0,1] at gaussian index {int(np.argmax(bad))}")
        bad = ((colors < 0) | (colors > 1)).any(axis=1)
        if bad.any():
            raise ValidationError(f"color outside [0,1] at gaussian index {int(np.argmax(bad))}")

        self.centers = _frozen(centers)
        self.scales = _frozen(scales)
        self.rotations = _frozen(rotations)
        self.opacities = _frozen(opacities)
        self.colors = _frozen(colors)
        self.units = units

    @classmethod
    def from_arrays(cls, centers, scales, rotations, opacities, colors, units: str = "cm") -> "GaussianSet":
        return cls(centers, scales, rotations, opacities, colors, units)

    @classmethod
    def from_gaussians(cls, gaussians: Iterable[Gaussian], units: str = "cm") -> "GaussianSet":
        gs = list(gaussians)
        if not gs:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3)), units)
        return cls(
            np.stack([g.center for g in gs]),
            np.stack([g.scale for g in gs]),
            np.stack([g.rotation for g in gs]),
            np.array([g.opacity for g in gs]),
            np.stack([g.color for g in gs]),
            units,
        )

    def __len__(self) -> int:
        return self.centers.shape[0]

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(self.centers[i], self.scales[i], self.rotations[i], float(self.opacities[i]), self.colors[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def gaussians(self) -> list[Gaussian]:
        return list(self)

    def subset(self, index: np.ndarray) -> "GaussianSet":
        # Already validated; skipping re-normalisation keeps subsets bit-identical.
        out = object.__new__(GaussianSet)
        for name in ("centers", "scales", "rotations", "opacities", "colors"):
            setattr(out, name, _frozen(np.array(getattr(self, name)[index])))
        out.units = self.units
        return out

    def rotation_matrices(self) -> np.ndarray:
        return quaternions_to_rotmats(self.rotations)

    def covariances(self) -> np.ndarray:
        """(N,3,3) world covariances."""
        r = self.rotation_matrices()
        return np.einsum("nij,nj,nkj->nik", r, self.scales**2, r)

    def rotated(self, rot: np.ndarray, translation: Optional[np.ndarray] = None) -> "GaussianSet":
        """Rigidly transform every Gaussian: x -> rot @ x + translation."""
        rot = np.asarray(rot, dtype=np.float64)
        t = np.zeros(3) if translation is None else np.asarray(translation, float)
        q_rot = rotmat_to_quaternion(rot)
        q = _quat_mul(np.broadcast_to(q_rot, self.rotations.shape), self.rotations)
        return GaussianSet(self.centers @ rot.T + t, self.scales, q, self.opacities, self.colors, self.units)

    def to_matrix(self) -> np.ndarray:
        """(N,14) attribute matrix: center, scale, rotation, opacity, color."""
        return np.concatenate(
            [self.centers, self.scales, self.rotations, self.opacities[:, None], self.colors], axis=1
        )

    def __repr__(self) -> str:
        return f"GaussianSet(n={len(self)}, units={self.units!r})"


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a.T
    bw, bx, by, bz = b.T
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=1,
    )


class TriMesh:
    """Indexed triangle mesh. Faces with repeated vertex indices are rejected."""

    def __init__(self, vertices: np.ndarray, faces: np.ndarray, vertex_colors: Optional[np.ndarray] = None) -> None:
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if not np.isfinite(vertices).all():
            bad = int(np.argmax(~np.isfinite(vertices).all(axis=1)))
            raise ValidationError(f"non-finite vertex at index {bad}")
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            bad = int(np.argmax(((faces < 0) | (faces >= len(vertices))).any(axis=1)))
            raise ValidationError(f"face {bad} has a vertex index out of range [0, {len(vertices)})")
        degenerate = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
        if degenerate.any():
            raise ValidationError(f"degenerate face {int(np.argmax(degenerate))} (repeated vertex index)")
        if vertex_colors is not None:
            vertex_colors = np.asarray(vertex_colors, dtype=np.float64).reshape(len(vertices), 3)
            vertex_colors = _frozen(vertex_colors)
        self.vertices = _frozen(vertices)
        self.faces = _frozen(faces)
        self.vertex_colors = vertex_colors

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        return TriMesh(vertices, self.faces, self.vertex_colors)

    def face_cross(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        return np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_normals(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit face normals and a boolean mask of zero-area faces (whose normal is zero)."""
        c = self.face_cross()
        n = np.linalg.norm(c, axis=1)
        zero = n <= 1e-300
        out = np.zeros_like(c)
        out[~zero] = c[~zero] / n[~zero, None]
        return out, zero

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals (zero for isolated vertices)."""
        c = self.face_cross()
        acc = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(acc, self.faces[:, k], c)
        n = np.linalg.norm(acc, axis=1)
        ok = n > 0
        acc[ok] /= n[ok, None]
        return acc

    def edges(self) -> np.ndarray:
        """Unique undirected edges as a sorted (E,2) array."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges()) + self.n_faces

    def __repr__(self) -> str:
        return f"TriMesh(vertices={self.n_vertices}, faces={self.n_faces})"


@dataclass(frozen=True)
class OrthoCamera:
    """Orthographic camera. ``rotation`` maps world to camera; the camera looks down -z.

    A camera-space point (x, y, z) lands at continuous pixel coordinates
    ``px = (x + half_width) / (2 half_width) * width`` and
    ``py = (half_height - y) / (2 half_height) * height``; its depth is ``-z``.
    """

    rotation: np.ndarray
    translation: np.ndarray
    half_width: float
    half_height: float
    width: int
    height: int
    near: float = 0.0
    far: float = 100.0

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-6:
            raise ValidationError("camera rotation is not orthonormal")
        if not (self.far > self.near):
            raise ValidationError("camera far must exceed near")
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValidationError("camera width and height must be >= 1")
        if not (self.half_width > 0 and self.half_height > 0):
            raise ValidationError("camera half extents must be positive")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(t))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "half_width", float(self.half_width))
        object.__setattr__(self, "half_height", float(self.half_height))

    @classmethod
    def looking_along(
        cls,
        view_dir: Sequence[float],
        up: Sequence[float] = (0.0, 1.0, 0.0),
        center: Sequence[float] = (0.0, 0.0, 0.0),
        extent: float = 1.0,
        size: int | tuple[int, int] = 64,
        distance: float = 10.0,
        depth_range: float = 20.0,
    ) -> "OrthoCamera":
        """Camera looking along ``view_dir`` at ``center``, framing a square of half-size ``extent``."""
        d = np.asarray(view_dir, dtype=np.float64)
        d = d / np.linalg.norm(d)
        u = np.asarray(up, dtype=np.float64)
        z = -d
        x = np.cross(u, z)
        if np.linalg.norm(x) < 1e-9:
            raise ValidationError("up vector is parallel to the view direction")
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        r = np.stack([x, y, z])
        eye = np.asarray(center, dtype=np.float64) - d * distance
        w, h = (size, size) if isinstance(size, int) else size
        return cls(r, -r @ eye, extent, extent, w, h, 0.0, depth_range)

    @property
    def view_direction(self) -> np.ndarray:
        """World-space unit direction the camera looks along."""
        return -self.rotation[2]

    @property
    def pixel_pitch(self) -> tuple[float, float]:
        return 2 * self.half_width / self.width, 2 * self.half_height / self.height

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """World points -> (px, py, depth) in continuous pixel coordinates."""
        pc = self.to_camera(points)
        px = (pc[..., 0] + self.half_width) * (self.width / (2 * self.half_width))
        py = (self.half_height - pc[..., 1]) * (self.height / (2 * self.half_height))
        return px, py, -pc[..., 2]

    def pixel_centers_camera(self) -> tuple[np.ndarray, np.ndarray]:
        """Camera-space (x, y) of every pixel center, each shaped (H, W)."""
        sx, sy = self.pixel_pitch
        xs = -self.half_width + (np.arange(self.width) + 0.5) * sx
        ys = self.half_height - (np.arange(self.height) + 0.5) * sy
        return np.meshgrid(xs, ys)

    def pixel_ray_origins(self) -> np.ndarray:
        """World-space ray origins on the camera plane (z_cam = 0), shape (H, W, 3)."""
        x, y = self.pixel_centers_camera()
        pc = np.stack([x, y, np.zeros_like(x)], axis=-1)
        return (pc - self.translation) @ self.rotation

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "half_width": self.half_width,
            "half_height": self.half_height,
            "width": self.width,
            "height": self.height,
            "near": self.near,
            "far": self.far,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OrthoCamera":
        return cls(**d)

    def with_resolution(self, width: int, height: Optional[int] = None) -> "OrthoCamera":
        return OrthoCamera(self.rotation, self.translation, self.half_width, self.half_height,
                           width, width if height is None else height, self.near, self.far)


@dataclass(frozen=True)
class FeatureMap:
    """Dense channel-major C x H x W grid of finite scalars."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim == 2:
            a = a[None]
        if a.ndim != 3 or min(a.shape) < 1:
            raise ValidationError(f"feature map must be C x H x W with positive sizes, got {a.shape}")
        if not np.isfinite(a).all():
            raise ValidationError("feature map contains non-finite entries")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self) -> str:
        return f"FeatureMap(channels={self.channels}, height={self.height}, width={self.width})"
