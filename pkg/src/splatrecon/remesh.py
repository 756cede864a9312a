"""Gaussian-guided remeshing.

A coarse mesh comes from marching cubes on the opacity-weighted Gaussian
density. Its vertices are then moved to reduce

    L = lambda_normal * L_normal + lambda_mask * L_mask + lambda_lap * R_lap

where the normal and mask targets are normal-mode renders of the Gaussians
and R_lap is the umbrella Laplacian energy. Topology stays fixed.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from skimage.measure import marching_cubes

from .rasterizer import MeshTopology, RenderOutput, SoftRenderConfig, render_gaussians, render_mesh_with_grads
from .splatcore import GaussianSet, OrthoCamera, SplatError, TriMesh, ValidationError
from .splatcore.cameras import make_camera_rig

log = logging.getLogger(__name__)

MOMENTUM = 0.9
STALL_STEPS = 10
STEP_DECAY = 0.5
STEP_RECOVERY = 1.1  # per accepted step, capped at the configured step size


class RemeshError(SplatError):
    """Raised when initialisation or optimisation cannot proceed."""


@dataclass
class RemeshConfig:
    """Remeshing settings.

    ``views`` defaults to an 8-view ring around the Gaussians at
    ``render_size`` pixels. ``iso_level`` is an absolute density level; when
    None, ``iso_fraction`` times the grid maximum is used.
    """

    views: Optional[list] = None
    iterations: int = 200
    step_size: float = 0.3
    lambda_normal: float = 1.0
    lambda_mask: float = 1.0
    lambda_lap: float = 1.0
    grid_res: int = 24
    iso_level: Optional[float] = None
    iso_fraction: float = 0.3
    stop_tol: float = 1e-5
    render_size: int = 64
    render: SoftRenderConfig = field(default_factory=SoftRenderConfig)
    threads: int = 1

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if not self.step_size > 0:
            raise ValidationError("step_size must be positive")
        if self.grid_res < 8:
            raise ValidationError("grid_res must be >= 8")
        if not 0 < self.iso_fraction < 1:
            raise ValidationError("iso_fraction must lie in (0, 1)")
        if self.stop_tol < 0:
            raise ValidationError("stop_tol must be >= 0")
        if min(self.lambda_normal, self.lambda_mask, self.lambda_lap) < 0:
            raise ValidationError("loss weights must be >= 0")


@dataclass
class RemeshReport:
    """Loss history of accepted states (entry 0 is the starting mesh) and bookkeeping."""

    iterations: list = field(default_factory=list)
    n_iterations: int = 0
    n_accepted: int = 0
    n_rejected: int = 0
    stop_reason: str = ""
    wall_ms: float = 0.0
    verts_before: int = 0
    verts_after: int = 0
    faces_before: int = 0
    faces_after: int = 0
    isolated_vertices: int = 0

    @property
    def final(self) -> dict:
        return self.iterations[-1] if self.iterations else {}

    def to_dict(self, include_wall: bool = True) -> dict:
        return {
            "iterations": self.iterations,
            "wall_ms": self.wall_ms if include_wall else None,
            "verts_before": self.verts_before,
            "verts_after": self.verts_after,
            "faces_before": self.faces_before,
            "faces_after": self.faces_after,
            "n_iterations": self.n_iterations,
            "n_accepted": self.n_accepted,
            "n_rejected": self.n_rejected,
            "stop_reason": self.stop_reason,
        }

    def to_json(self, include_wall: bool = True) -> str:
        return json.dumps(self.to_dict(include_wall), indent=2, sort_keys=True)


# -- coarse initialisation ----------------------------------------------------------


def gaussian_bounds(gaussians: GaussianSet, pad_sigmas: float = 3.0) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned box holding every Gaussian's ``pad_sigmas`` ellipsoid."""
    if len(gaussians) == 0:
        raise ValidationError("empty gaussian set")
    half = pad_sigmas * np.sqrt(np.diagonal(gaussians.covariances(), axis1=1, axis2=2))
    return (gaussians.centers - half).min(axis=0), (gaussians.centers + half).max(axis=0)


def grid_axes(bounds, grid_res: int) -> list[np.ndarray]:
    lo, hi = (np.asarray(b, dtype=np.float64).reshape(3) for b in bounds)
    if not (np.isfinite(lo).all() and np.isfinite(hi).all()) or (hi <= lo).any():
        raise ValidationError(f"degenerate bounds lo={lo.tolist()} hi={hi.tolist()}")
    return [np.linspace(lo[k], hi[k], grid_res) for k in range(3)]


def density_field(gaussians: GaussianSet, grid_res: int, bounds=None) -> np.ndarray:
    """Opacity-weighted Gaussian density sampled on a ``grid_res``^3 lattice.

    Entry ``[i, j, k]`` sits at ``(x_i, y_j, z_k)`` with each axis a
    ``linspace`` over ``bounds``. Each Gaussian only touches lattice points
    inside its axis-aligned 3-sigma box.
    """
    if len(gaussians) == 0:
        raise ValidationError("empty gaussian set")
    if grid_res < 2:
        raise ValidationError("grid_res must be >= 2")
    if bounds is None:
        bounds = gaussian_bounds(gaussians)
    axes = grid_axes(bounds, grid_res)
    cov = gaussians.covariances()
    prec = np.linalg.inv(cov)
    half = 3.0 * np.sqrt(np.diagonal(cov, axis1=1, axis2=2))
    grid = np.zeros((grid_res,) * 3)
    for g in range(len(gaussians)):
        mu = gaussians.centers[g]
        sl = []
        for k in range(3):
            i0 = np.searchsorted(axes[k], mu[k] - half[g, k], side="left")
            i1 = np.searchsorted(axes[k], mu[k] + half[g, k], side="right")
            sl.append((i0, i1))
        if any(i0 >= i1 for i0, i1 in sl):
            continue
        dx = axes[0][sl[0][0] : sl[0][1]] - mu[0]
        dy = axes[1][sl[1][0] : sl[1][1]] - mu[1]
        dz = axes[2][sl[2][0] : sl[2][1]] - mu[2]
        p = prec[g]
        q = (
            p[0, 0] * dx[:, None, None] ** 2
            + p[1, 1] * dy[None, :, None] ** 2
            + p[2, 2] * dz[None, None, :] ** 2
            + 2 * p[0, 1] * dx[:, None, None] * dy[None, :, None]
            + 2 * p[0, 2] * dx[:, None, None] * dz[None, None, :]
            + 2 * p[1, 2] * dy[None, :, None] * dz[None, None, :]
        )
        grid[sl[0][0] : sl[0][1], sl[1][0] : sl[1][1], sl[2][0] : sl[2][1]] += gaussians.opacities[g] * np.exp(-0.5 * q)
    return grid


def largest_component(mesh: TriMesh) -> TriMesh:
    """Keep the vertex-connected component with the most faces; drop unused vertices."""
    f = mesh.faces
    nv = mesh.n_vertices
    rows = np.concatenate([f[:, 0], f[:, 1], f[:, 2]])
    cols = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    adj = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(nv, nv))
    _, labels = connected_components(adj, directed=False)
    face_label = labels[f[:, 0]]
    counts = np.bincount(face_label)
    keep = face_label == int(np.argmax(counts))
    f = f[keep]
    used = np.unique(f)
    remap = np.full(nv, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(mesh.vertices[used], remap[f])


def signed_volume(mesh: TriMesh) -> float:
    v = mesh.vertices[mesh.faces]
    return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)


def init_coarse_mesh(gaussians: GaussianSet, config: Optional[RemeshConfig] = None) -> TriMesh:
    """Marching cubes on the density field, largest component, outward-facing triangles."""
    cfg = config or RemeshConfig()
    lo, hi = gaussian_bounds(gaussians)
    cell = (hi - lo) / (cfg.grid_res - 3)
    # Two spare cells on each side keep the iso-surface closed.
    lo, hi = lo - cell, hi + cell
    grid = density_field(gaussians, cfg.grid_res, (lo, hi))
    gmax = float(grid.max())
    level = cfg.iso_level if cfg.iso_level is not None else cfg.iso_fraction * gmax
    if not level < gmax or not level > 0:
        raise RemeshError(
            f"empty iso-surface: iso_level {level:.6g} is outside (0, {gmax:.6g}); "
            f"try iso_level={0.3 * gmax:.6g}"
        )
    spacing = tuple(float(s) for s in (hi - lo) / (cfg.grid_res - 1))
    verts, faces, _, _ = marching_cubes(grid, level=level, spacing=spacing, allow_degenerate=False)
    verts = verts.astype(np.float64) + lo
    faces = faces.astype(np.int64)
    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    mesh = largest_component(TriMesh(verts, faces[keep]))
    areas = mesh.face_areas()
    if (areas <= 0).any():
        mesh = largest_component(TriMesh(mesh.vertices, mesh.faces[areas > 0]))
    if signed_volume(mesh) < 0:
        mesh = TriMesh(mesh.vertices, mesh.faces[:, [0, 2, 1]])
    return mesh


# -- Laplacian regulariser ----------------------------------------------------------


def umbrella_operator(mesh: TriMesh) -> tuple[sparse.csr_matrix, np.ndarray]:
    """Vertex adjacency matrix and vertex degrees (zero for isolated vertices)."""
    nv = mesh.n_vertices
    e = mesh.edges()
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    adj = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(nv, nv))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return adj, deg


def umbrella_deltas(vertices: np.ndarray, operator) -> np.ndarray:
    """``mean of neighbours - v`` per vertex; zero for isolated vertices."""
    adj, deg = operator
    has = deg > 0
    delta = np.zeros_like(vertices)
    delta[has] = (adj @ vertices)[has] / deg[has, None] - vertices[has]
    return delta


def laplacian_energy(mesh: TriMesh, operator=None, warn: bool = True) -> tuple[float, np.ndarray]:
    """Mean squared umbrella Laplacian over non-isolated vertices and its vertex gradient."""
    adj, deg = operator if operator is not None else umbrella_operator(mesh)
    has = deg > 0
    n_iso = int((~has).sum())
    if n_iso and warn:
        log.warning("laplacian excludes isolated vertices count=%d", n_iso)
    n = mesh.n_vertices - n_iso
    if n == 0:
        return 0.0, np.zeros_like(mesh.vertices)
    delta = umbrella_deltas(mesh.vertices, (adj, deg))
    energy = float((delta * delta).sum() / n)
    scaled = np.zeros_like(delta)
    scaled[has] = delta[has] / deg[has, None]
    grad = (2.0 / n) * (adj.T @ scaled - delta)
    return energy, np.asarray(grad)


# -- refinement -------------------------------------------------------------------------


@dataclass
class ViewTarget:
    camera: OrthoCamera
    normal: np.ndarray  # (3, H, W)
    mask: np.ndarray  # (H, W)


def default_views(gaussians: GaussianSet, size: int) -> list[OrthoCamera]:
    lo, hi = gaussian_bounds(gaussians, pad_sigmas=0.0)
    center = 0.5 * (lo + hi)
    extent = 1.15 * float(np.linalg.norm(gaussians.centers - center, axis=1).max())
    return make_camera_rig("ring8", size=size, extent=extent, center=center)


def render_targets(gaussians: GaussianSet, views: Sequence[OrthoCamera], config: Optional[SoftRenderConfig] = None) -> list[ViewTarget]:
    out = []
    for k, cam in enumerate(views):
        r: RenderOutput = render_gaussians(gaussians, cam, mode="normal", config=config)
        if not (r.alpha[0] > 0.5).any():
            raise RemeshError(f"gaussians leave view {k} empty")
        out.append(ViewTarget(cam, r.image, r.alpha[0]))
    return out


class _Objective:
    def __init__(self, faces, targets: Sequence[ViewTarget], cfg: RemeshConfig, mesh: TriMesh) -> None:
        self.faces = faces
        self.targets = list(targets)
        self.cfg = cfg
        self.topology = MeshTopology.from_faces(faces)
        self.operator = umbrella_operator(mesh)
        self.pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None

    def _view(self, mesh: TriMesh, t: ViewTarget):
        return render_mesh_with_grads(mesh, t.camera, self.cfg.render, t.normal, t.mask, topology=self.topology)

    def __call__(self, vertices: np.ndarray) -> tuple[dict, np.ndarray]:
        mesh = TriMesh(vertices, self.faces)
        cfg = self.cfg
        if self.pool is not None:
            results = list(self.pool.map(lambda t: self._view(mesh, t), self.targets))
        else:
            results = [self._view(mesh, t) for t in self.targets]
        # Ordered reduction keeps the sum deterministic.
        ln = lm = 0.0
        gn = np.zeros_like(vertices)
        gm = np.zeros_like(vertices)
        for r in results:
            ln += r.l_normal
            lm += r.l_mask
            gn += r.grad_normal
            gm += r.grad_mask
        lap, glap = laplacian_energy(mesh, self.operator, warn=False)
        total = cfg.lambda_normal * ln + cfg.lambda_mask * lm + cfg.lambda_lap * lap
        grad = cfg.lambda_normal * gn + cfg.lambda_mask * gm + cfg.lambda_lap * glap
        return {"normal": ln, "mask": lm, "lap": lap, "total": total}, grad

    def close(self) -> None:
        if self.pool is not None:
            self.pool.shutdown()


def refine(mesh: TriMesh, targets: Sequence[ViewTarget], config: Optional[RemeshConfig] = None) -> tuple[TriMesh, RemeshReport]:
    """Momentum descent on vertex positions with rollback and step halving on loss increases."""
    cfg = config or RemeshConfig()
    t0 = time.perf_counter()
    report = RemeshReport(verts_before=mesh.n_vertices, faces_before=mesh.n_faces)
    obj = _Objective(mesh.faces, targets, cfg, mesh)
    report.isolated_vertices = int((obj.operator[1] == 0).sum())
    if report.isolated_vertices:
        log.warning("laplacian excludes isolated vertices count=%d", report.isolated_vertices)
    try:
        x = np.array(mesh.vertices)
        losses, grad = obj(x)
        if not np.isfinite(losses["total"]):
            raise RemeshError("non-finite loss at iteration 0")
        report.iterations.append(losses)
        if cfg.lambda_normal == cfg.lambda_mask == cfg.lambda_lap == 0:
            report.stop_reason = "all loss weights are zero"
        else:
            vel = np.zeros_like(x)
            step = cfg.step_size
            stall = 0
            report.stop_reason = "iteration limit"
            for it in range(1, cfg.iterations + 1):
                report.n_iterations = it
                vel = MOMENTUM * vel - step * grad
                cand = x + vel
                new, new_grad = obj(cand)
                if not np.isfinite(new["total"]):
                    raise RemeshError(f"non-finite loss at iteration {it}")
                if new["total"] <= losses["total"]:
                    rel = (losses["total"] - new["total"]) / max(abs(losses["total"]), 1e-300)
                    x, losses, grad = cand, new, new_grad
                    step = min(step * STEP_RECOVERY, cfg.step_size)
                    report.n_accepted += 1
                    report.iterations.append(losses)
                    stall = stall + 1 if rel < cfg.stop_tol else 0
                    if stall >= STALL_STEPS:
                        report.stop_reason = "relative improvement below stop_tol"
                        break
                else:
                    report.n_rejected += 1
                    step *= STEP_DECAY
                    vel = np.zeros_like(x)
                log.debug("remesh iter=%d total=%.6g step=%.3g", it, losses["total"], step)
        out = mesh.with_vertices(x) if report.n_accepted else mesh
    finally:
        obj.close()
    report.verts_after = out.n_vertices
    report.faces_after = out.n_faces
    report.wall_ms = (time.perf_counter() - t0) * 1e3
    return out, report


def remesh(gaussians: GaussianSet, config: Optional[RemeshConfig] = None) -> tuple[TriMesh, RemeshReport]:
    """Render normal/mask targets from the Gaussians, initialise by marching cubes, then refine."""
    cfg = config or RemeshConfig()
    t0 = time.perf_counter()
    views = cfg.views if cfg.views is not None else default_views(gaussians, cfg.render_size)
    targets = render_targets(gaussians, views, cfg.render)
    coarse = init_coarse_mesh(gaussians, cfg)
    refined, report = refine(coarse, targets, cfg)
    report.wall_ms = (time.perf_counter() - t0) * 1e3
    log.info(
        "remesh done iters=%d accepted=%d total=%.6g wall_ms=%.0f",
        report.n_iterations, report.n_accepted, report.final["total"], report.wall_ms,
    )
    return refined, report
