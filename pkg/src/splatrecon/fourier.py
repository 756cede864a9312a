"""Fourier geometry encoder.

Body points are expanded into multi-frequency sin/cos features, densified
over the mesh triangles, splatted into three orthographic views with a
z-buffer, and passed through one shared 3x3 convolution together with the
per-view Plucker camera maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .ops import conv2d
from .splatcore import FeatureMap, OrthoCamera, TriMesh, ValidationError

DEFAULT_ORDER = 4
DEFAULT_POINTS = 65536


def feature_length(order: int) -> int:
    return 3 * (2 * order + 1)


@dataclass(frozen=True)
class FourierCloud:
    """Points with per-point feature vectors.

    ``face_index``/``barycentric`` are set for samples produced by
    :func:`densify_surface` (original vertices carry face index -1).
    """

    points: np.ndarray
    features: np.ndarray
    order: Optional[int]
    face_index: Optional[np.ndarray] = field(default=None, repr=False)
    barycentric: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class ProjectionStats:
    projected: int
    occluded: int
    off_screen: int


@dataclass(frozen=True)
class FourierStack:
    maps: tuple[FeatureMap, FeatureMap, FeatureMap]
    cameras: tuple[OrthoCamera, OrthoCamera, OrthoCamera]
    masks: tuple[np.ndarray, np.ndarray, np.ndarray] = field(repr=False)
    stats: tuple[ProjectionStats, ProjectionStats, ProjectionStats] = ()

    def as_array(self) -> np.ndarray:
        """(3, 3(2q+1), H, W) stacked view maps."""
        return np.stack([m.data for m in self.maps])


def fourier_expand(points: np.ndarray, q: int) -> FourierCloud:
    """Expand points into ``[p, cos(2^1 p), sin(2^1 p), ..., cos(2^q p), sin(2^q p)]``."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if q < 0 or int(q) != q:
        raise ValueError(f"Fourier order must be a non-negative integer, got {q}")
    if not np.isfinite(p).all():
        bad = int(np.argmax(~np.isfinite(p).all(axis=1)))
        raise ValidationError(f"non-finite coordinate at point {bad}")
    blocks = [p]
    for n in range(1, int(q) + 1):
        arg = (2.0**n) * p
        blocks.append(np.cos(arg))
        blocks.append(np.sin(arg))
    return FourierCloud(p.copy(), np.concatenate(blocks, axis=1), int(q))


def densify_surface(
    mesh: TriMesh,
    per_point_features: np.ndarray,
    m: int,
    seed: int = 0,
    centroid_only: bool = False,
) -> FourierCloud:
    """Resample a mesh to ``m`` points, interpolating per-vertex features barycentrically.

    The first ``V`` samples are the mesh vertices themselves. The remaining
    ``m - V`` pick triangles by area with stratified uniforms and place a
    random barycentric point inside (or the centroid, with ``centroid_only``);
    positions and features share the same weights.
    """
    feats = np.asarray(per_point_features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] != mesh.n_vertices:
        raise ValidationError(
            f"per-point features must have one row per vertex ({mesh.n_vertices}), got shape {feats.shape}"
        )
    if m < mesh.n_vertices:
        raise ValueError(f"target count {m} is below the vertex count {mesh.n_vertices}")
    areas = mesh.face_areas()
    if mesh.n_faces == 0 and m > mesh.n_vertices:
        raise ValidationError("mesh has no faces to sample")
    if (areas <= 0).any():
        raise ValidationError(f"degenerate triangle {int(np.argmax(areas <= 0))} (zero area)")

    extra = m - mesh.n_vertices
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(areas)
    cdf /= cdf[-1] if len(cdf) else 1.0
    u = (np.arange(extra) + rng.random(extra)) / max(extra, 1)
    tri = np.minimum(np.searchsorted(cdf, u, side="right"), mesh.n_faces - 1)
    if centroid_only:
        bary = np.full((extra, 3), 1.0 / 3.0)
    else:
        r1 = np.sqrt(rng.random(extra))
        r2 = rng.random(extra)
        bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)

    corners = mesh.faces[tri]
    pos = np.einsum("sk,skd->sd", bary, mesh.vertices[corners])
    fe = np.einsum("sk,skd->sd", bary, feats[corners])

    order = None
    if feats.shape[1] % 3 == 0 and (feats.shape[1] // 3 - 1) % 2 == 0:
        order = (feats.shape[1] // 3 - 1) // 2
    face_index = np.concatenate([np.full(mesh.n_vertices, -1), tri])
    vb = np.zeros((mesh.n_vertices, 3))
    return FourierCloud(
        np.concatenate([mesh.vertices, pos]),
        np.concatenate([feats, fe]),
        order,
        face_index,
        np.concatenate([vb, bary]),
    )


def encode_mesh_points(mesh: TriMesh, q: int = DEFAULT_ORDER, m: int = DEFAULT_POINTS, seed: int = 0,
                       centroid_only: bool = False) -> FourierCloud:
    """Expand the vertices of ``mesh`` and densify the expanded features over its surface."""
    expanded = fourier_expand(mesh.vertices, q)
    return densify_surface(mesh, expanded.features, m, seed=seed, centroid_only=centroid_only)


def project_features_with_stats(cloud: FourierCloud, camera: OrthoCamera) -> tuple[FeatureMap, np.ndarray, ProjectionStats]:
    """Nearest-pixel z-buffered splat of point features. Returns (map, coverage mask, stats)."""
    if len(cloud) == 0:
        raise ValidationError("cannot project an empty cloud")
    px, py, depth = camera.project(cloud.points)
    j = np.floor(px).astype(np.int64)
    i = np.floor(py).astype(np.int64)
    inside = (
        (j >= 0) & (j < camera.width) & (i >= 0) & (i < camera.height)
        & (depth >= camera.near) & (depth <= camera.far)
    )
    idx = np.nonzero(inside)[0]
    pix = i[idx] * camera.width + j[idx]
    order = np.lexsort((idx, depth[idx], pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    winners = idx[order[first]]
    win_pix = pix_sorted[first]

    c = cloud.features.shape[1]
    out = np.zeros((c, camera.height * camera.width))
    out[:, win_pix] = cloud.features[winners].T
    mask = np.zeros(camera.height * camera.width, dtype=bool)
    mask[win_pix] = True
    stats = ProjectionStats(
        projected=int(len(winners)),
        occluded=int(len(idx) - len(winners)),
        off_screen=int(len(cloud) - len(idx)),
    )
    shape = (camera.height, camera.width)
    return FeatureMap(out.reshape(c, *shape)), mask.reshape(shape), stats


def project_features(cloud: FourierCloud, camera: OrthoCamera) -> FeatureMap:
    return project_features_with_stats(cloud, camera)[0]


def build_fourier_stack(cloud: FourierCloud, cameras: Sequence[OrthoCamera]) -> FourierStack:
    cameras = tuple(cameras)
    if len(cameras) != 3:
        raise ValidationError(f"a Fourier stack needs exactly 3 cameras, got {len(cameras)}")
    if len({(c.height, c.width) for c in cameras}) != 1:
        raise ValidationError("stack cameras must share one resolution")
    results = [project_features_with_stats(cloud, cam) for cam in cameras]
    return FourierStack(
        maps=tuple(r[0] for r in results),
        cameras=cameras,
        masks=tuple(r[1] for r in results),
        stats=tuple(r[2] for r in results),
    )


def plucker_map(camera: OrthoCamera) -> FeatureMap:
    """6 x H x W map: world ray direction (channels 0-2) and moment o x d (channels 3-5)."""
    d = camera.view_direction / np.linalg.norm(camera.view_direction)
    origins = camera.pixel_ray_origins()
    dirs = np.broadcast_to(d, origins.shape)
    moment = np.cross(origins, dirs)
    return FeatureMap(np.concatenate([np.moveaxis(dirs, -1, 0), np.moveaxis(moment, -1, 0)]))


def encode_stack(
    stack: FourierStack | np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    plucker: Optional[Sequence[np.ndarray]] = None,
) -> np.ndarray:
    """Shared 3x3 convolution over each view's ``[Fourier maps, Plucker map]``; returns (3, o, H, W).

    ``weight`` is (o, 3(2q+1)+6, 3, 3) for one shared weight set, or
    (3, o, C, 3, 3) for per-view weights. ``plucker`` defaults to the maps
    of the stack's cameras.
    """
    if isinstance(stack, FourierStack):
        maps = stack.as_array()
        if plucker is None:
            plucker = [plucker_map(c).data for c in stack.cameras]
    else:
        maps = np.asarray(stack, dtype=np.float64)
        if plucker is None:
            raise ValueError("plucker maps are required when encoding a raw array")
    if maps.shape[0] != 3:
        raise ValidationError(f"expected 3 views, got {maps.shape[0]}")
    weight = np.asarray(weight, dtype=np.float64)
    per_view = weight.ndim == 5
    outs = []
    for v in range(3):
        pl = np.asarray(plucker[v], dtype=np.float64)
        if pl.shape != (6,) + maps.shape[2:]:
            raise ValidationError(f"plucker map for view {v} has shape {pl.shape}")
        x = np.concatenate([maps[v], pl])
        w = weight[v] if per_view else weight
        b = np.asarray(bias)[v] if per_view else bias
        if w.shape[1] != x.shape[0] or w.shape[2:] != (3, 3):
            raise ValidationError(
                f"encoder weight expects {w.shape[1]} input channels (3x3), stack provides {x.shape[0]}"
            )
        if np.asarray(b).shape != (w.shape[0],):
            raise ValidationError("encoder bias length must equal output channels")
        outs.append(conv2d(x, w, b))
    return np.stack(outs)


def init_encoder_weights(order: int, out_channels: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Seeded uniform init with the usual 1/sqrt(fan_in) bound."""
    cin = feature_length(order) + 6
    bound = 1.0 / np.sqrt(cin * 9)
    rng = np.random.default_rng(seed)
    return (rng.uniform(-bound, bound, (out_channels, cin, 3, 3)),
            rng.uniform(-bound, bound, out_channels))
