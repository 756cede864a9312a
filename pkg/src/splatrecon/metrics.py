"""Geometry and image evaluation metrics with brute-force oracle modes.

Geometry metrics work on point samples. Meshes are converted with seeded,
area-weighted surface sampling; distances are point-to-point, not
point-to-triangle.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .splatcore import TriMesh, ValidationError

PSNR_CAP = 99.0
DEFAULT_SAMPLES = 100_000
DEFAULT_TAU = 1.0
SSIM_SIGMA = 1.5

Surface = Union[TriMesh, tuple]  # mesh, or (points, normals)


# -- point sets ------------------------------------------------------------------------


def _points(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValidationError(f"{name} must be an (N, 3) array, got shape {a.shape}")
    if len(a) == 0:
        raise ValidationError(f"{name} is empty")
    if not np.isfinite(a).all():
        raise ValidationError(f"{name} contains non-finite coordinates")
    return a


def _dist(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    # The one distance formula used by both the tree and brute-force paths.
    d0 = p[..., 0] - q[..., 0]
    d1 = p[..., 1] - q[..., 1]
    d2 = p[..., 2] - q[..., 2]
    return np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)


def nearest_distances_brute(query: np.ndarray, ref: np.ndarray, block: int = 256) -> np.ndarray:
    """O(n*m) nearest-neighbour distances, in row blocks."""
    out = np.empty(len(query))
    for s in range(0, len(query), block):
        out[s : s + block] = _dist(query[s : s + block, None, :], ref[None, :, :]).min(axis=1)
    return out


def nearest_distances(query: np.ndarray, ref: np.ndarray, tree: Optional[cKDTree] = None, workers: int = 1):
    """Tree-accelerated nearest distances, bit-identical to the brute-force path.

    The tree proposes every reference point within a hair of its own nearest
    distance; those candidates are re-scored with the shared formula and the
    minimum taken, so rounding inside the tree cannot change the answer.
    Returns (distances, nearest indices).
    """
    tree = tree or cKDTree(ref)
    d_tree, _ = tree.query(query, k=1, workers=workers)
    radius = d_tree * (1.0 + 1e-9) + 1e-12
    cands = tree.query_ball_point(query, radius, workers=workers)
    counts = np.fromiter((len(c) for c in cands), dtype=np.int64, count=len(query))
    flat = np.fromiter((j for c in cands for j in c), dtype=np.int64, count=int(counts.sum()))
    owner = np.repeat(np.arange(len(query)), counts)
    d = _dist(query[owner], ref[flat])
    # Sort by (owner, distance, index) so each run starts with its minimum.
    order = np.lexsort((flat, d, owner))
    first = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return d[order][first], flat[order][first]


def chamfer(pred, gt, brute_force: bool = False, workers: int = 1) -> tuple[float, float]:
    """(pred-to-gt, gt-to-pred) mean nearest-neighbour distances."""
    pred = _points(pred, "pred")
    gt = _points(gt, "gt")
    if brute_force:
        return float(np.mean(nearest_distances_brute(pred, gt))), float(np.mean(nearest_distances_brute(gt, pred)))
    return (
        float(np.mean(nearest_distances(pred, gt, workers=workers)[0])),
        float(np.mean(nearest_distances(gt, pred, workers=workers)[0])),
    )


def f_score(pred, gt, tau: float = DEFAULT_TAU, brute_force: bool = False, workers: int = 1) -> float:
    """Harmonic mean of precision and recall at threshold tau (a point counts when d < tau)."""
    if not tau > 0:
        raise ValidationError("tau must be positive")
    pred = _points(pred, "pred")
    gt = _points(gt, "gt")
    if brute_force:
        dp, dg = nearest_distances_brute(pred, gt), nearest_distances_brute(gt, pred)
    else:
        dp, dg = nearest_distances(pred, gt, workers=workers)[0], nearest_distances(gt, pred, workers=workers)[0]
    p = np.count_nonzero(dp < tau) / len(dp)
    r = np.count_nonzero(dg < tau) / len(dg)
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


# -- surfaces ----------------------------------------------------------------------------


def sample_surface(mesh: TriMesh, n: int = DEFAULT_SAMPLES, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Area-weighted uniform samples and their unit face normals."""
    if mesh.n_faces == 0:
        raise ValidationError("mesh has no faces")
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise ValidationError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    face = rng.choice(mesh.n_faces, size=n, p=areas / total)
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    tri = mesh.vertices[mesh.faces[face]]
    pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
    normals, _ = mesh.face_normals()
    return pts, normals[face]


def _surface(s: Surface, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(s, TriMesh):
        return sample_surface(s, n, seed)
    pts, nrm = s
    pts = _points(pts, "surface points")
    nrm = np.asarray(nrm, dtype=np.float64)
    if nrm.shape != pts.shape:
        raise ValidationError("surface normals must match points")
    length = np.linalg.norm(nrm, axis=1)
    if (length <= 0).any():
        raise ValidationError("surface normals must be nonzero")
    return pts, nrm / length[:, None]


def normal_consistency(pred: Surface, gt: Surface, samples: int = DEFAULT_SAMPLES, seed: int = 0, workers: int = 1) -> float:
    """Mean |n_a . n_b| at nearest-neighbour matches, averaged over both directions.

    Either argument may be a mesh (sampled here) or a (points, normals) pair.
    """
    pa, na = _surface(pred, samples, seed)
    pb, nb = _surface(gt, samples, seed + 1)
    _, ab = nearest_distances(pa, pb, workers=workers)
    _, ba = nearest_distances(pb, pa, workers=workers)
    fwd = np.abs(np.einsum("ij,ij->i", na, nb[ab])).mean()
    bwd = np.abs(np.einsum("ij,ij->i", nb, na[ba])).mean()
    return float(0.5 * (fwd + bwd))


# -- images ------------------------------------------------------------------------------


def _images(a, b, peak: float) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}")
    for name, x in (("a", a), ("b", b)):
        if not np.isfinite(x).all():
            raise ValidationError(f"image {name} has non-finite pixels")
        if x.min() < 0 or x.max() > peak:
            raise ValidationError(f"image {name} values leave [0, {peak}]")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    a, b = _images(a, b, peak)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-12:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def _channels(x: np.ndarray) -> np.ndarray:
    # (H,W) -> (1,H,W); (C,H,W) kept.
    if x.ndim == 2:
        return x[None]
    if x.ndim == 3:
        return x
    raise ValidationError(f"images must be HxW or CxHxW, got shape {x.shape}")


def _ssim_map(a, b, mean, c1, c2):
    mu_a, mu_b = mean(a), mean(b)
    var_a = mean(a * a) - mu_a * mu_a
    var_b = mean(b * b) - mu_b * mu_b
    cov = mean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, window: int = 11, k1: float = 0.01, k2: float = 0.03, peak: float = 1.0, brute_force: bool = False) -> float:
    """Mean local SSIM under a Gaussian window (sigma 1.5), per channel then averaged.

    Only windows fully inside the image are averaged, so the result does not
    depend on a boundary mode.
    """
    if window < 3 or window % 2 == 0:
        raise ValidationError("window must be an odd size >= 3")
    a, b = (_channels(x) for x in _images(a, b, peak))
    r = window // 2
    if min(a.shape[1:]) < window:
        raise ValidationError(f"images must be at least {window}x{window} for SSIM")
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    mean = _window_mean_brute(window) if brute_force else _window_mean_filter(window)
    vals = []
    for ch in range(a.shape[0]):
        m = _ssim_map(a[ch], b[ch], mean, c1, c2)
        if not brute_force:
            m = m[r:-r, r:-r]
        vals.append(m.mean())
    return float(np.mean(vals))


def _window_mean_filter(window: int):
    truncate = (window // 2) / SSIM_SIGMA

    def mean(x):
        return ndimage.gaussian_filter(x, SSIM_SIGMA, truncate=truncate, mode="reflect")

    return mean


def gaussian_window(window: int, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(window) - window // 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def _window_mean_brute(window: int):
    """Explicit weighted sum over every fully interior window."""
    w = gaussian_window(window)

    def mean(x):
        h, wd = x.shape
        out = np.empty((h - window + 1, wd - window + 1))
        for i in range(out.shape[0]):
            for j in range(out.shape[1]):
                out[i, j] = (x[i : i + window, j : j + window] * w).sum()
        return out

    return mean


# -- reports -----------------------------------------------------------------------------


@dataclass
class GeomReport:
    cd_p_to_s: float
    cd_s_to_p: float
    nc: float
    fscore: float
    tau: float
    n_pred: int = 0
    n_gt: int = 0

    JSON_KEYS = ("cd_p_to_s", "cd_s_to_p", "nc", "fscore", "tau")

    def __post_init__(self) -> None:
        for k in self.JSON_KEYS:
            if not np.isfinite(getattr(self, k)):
                raise ValidationError(f"non-finite {k} in geometry report")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in self.JSON_KEYS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass
class ImageReport:
    psnr_db: float
    ssim: float
    view: str = "front"

    JSON_KEYS = ("psnr_db", "ssim")

    def __post_init__(self) -> None:
        if not (np.isfinite(self.psnr_db) and np.isfinite(self.ssim)) or self.ssim > 1:
            raise ValidationError("image report values must be finite with ssim <= 1")

    def to_dict(self) -> dict:
        return {"psnr_db": self.psnr_db, "ssim": self.ssim}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate_geometry(
    pred: Surface, gt: Surface, tau: float = DEFAULT_TAU, samples: int = DEFAULT_SAMPLES, seed: int = 0, workers: int = 1
) -> GeomReport:
    pa, _ = _surface(pred, samples, seed)
    pb, _ = _surface(gt, samples, seed + 1)
    cd_ps, cd_sp = chamfer(pa, pb, workers=workers)
    return GeomReport(
        cd_p_to_s=cd_ps,
        cd_s_to_p=cd_sp,
        nc=normal_consistency(pred, gt, samples, seed, workers),
        fscore=f_score(pa, pb, tau, workers=workers),
        tau=float(tau),
        n_pred=len(pa),
        n_gt=len(pb),
    )


def evaluate_image(pred, gt, peak: float = 1.0, view: str = "front") -> ImageReport:
    return ImageReport(psnr(pred, gt, peak), ssim(pred, gt, peak=peak), view)
