"""File-to-file stage bodies shared by the subcommands and the pipeline."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from skimage.transform import resize

from .. import metrics
from ..fourier import encode_mesh_points, encode_stack, build_fourier_stack, plucker_map
from ..netshell import (
    NetshellWeights,
    decode_gaussian_map,
    dual_unet_forward,
    init_netshell_weights,
    texture_encode,
)
from ..rasterizer import render_gaussians, render_mesh
from ..remesh import RemeshConfig, RemeshReport, default_views, gaussian_bounds, remesh
from ..splatcore import (
    GaussianSet,
    OrthoCamera,
    ValidationError,
    load_gaussians_ply,
    load_mesh,
    load_png,
    load_tensor,
    save_gaussians_ply,
    save_mesh,
    save_png,
    save_tensor,
)
from ..splatcore.cameras import make_camera_rig
from ..splatcore.shapes import icosphere, remesh_sphere_fixture

log = logging.getLogger("splatrecon.cli")

FRAME_MARGIN = 1.1


def frame(points: np.ndarray, margin: float = FRAME_MARGIN) -> tuple[np.ndarray, float]:
    """Center and half-extent of a square view that holds every point."""
    lo, hi = points.min(axis=0), points.max(axis=0)
    center = 0.5 * (lo + hi)
    extent = margin * float(np.abs(points - center).max())
    if not extent > 0:
        raise ValidationError("cannot frame a degenerate point set")
    return center, extent


def save_cameras(cams: Sequence[OrthoCamera], path: Path) -> None:
    Path(path).write_text(json.dumps([c.to_dict() for c in cams], indent=2) + "\n")


def load_cameras(path: Path) -> list[OrthoCamera]:
    return [OrthoCamera.from_dict(d) for d in json.loads(Path(path).read_text())]


def cameras_path(stack_path: Path) -> Path:
    p = Path(stack_path)
    return p.with_name(p.stem + ".cameras.json")


def rig_for(points: np.ndarray, rig: str, size: int) -> list[OrthoCamera]:
    center, extent = frame(points)
    return make_camera_rig(rig, size=size, extent=extent, center=center)


# -- stages ------------------------------------------------------------------------------------


def write_sphere_fixture(out_dir: Path) -> dict:
    """Synthetic inputs: icosphere body mesh, surfel sphere avatar, fine icosphere ground truth."""
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"mesh": out_dir / "body.obj", "splat": out_dir / "avatar.ply", "gt": out_dir / "gt.obj"}
    save_mesh(icosphere(3), paths["mesh"])
    save_gaussians_ply(remesh_sphere_fixture(), paths["splat"])
    save_mesh(icosphere(5), paths["gt"])
    return paths


def encode_mesh_file(mesh_path: Path, out: Path, q: int, m: int, size: int, seed: int, centroid_only: bool = False) -> dict:
    mesh = load_mesh(mesh_path)
    cams = rig_for(mesh.vertices, "front3", size)
    stack = build_fourier_stack(encode_mesh_points(mesh, q, m, seed=seed, centroid_only=centroid_only), cams)
    save_tensor(stack.as_array(), out)
    save_cameras(cams, cameras_path(out))
    occluded = sum(s.occluded for s in stack.stats)
    log.info("encoded mesh views=3 channels=%d size=%d occluded=%d", stack.as_array().shape[1], size, occluded)
    return {"occluded": occluded, "projected": sum(s.projected for s in stack.stats)}


def render_front_image(splat_path: Path, stack_path: Path, out: Path) -> None:
    gs = load_gaussians_ply(splat_path)
    cam = load_cameras(cameras_path(stack_path))[0]
    save_png(np.clip(render_gaussians(gs, cam).image, 0, 1), out)


def render_views(
    out_dir: Path, size: int, rig: str, splat: Optional[Path] = None, mesh: Optional[Path] = None, mode: str = "color"
) -> list[Path]:
    """Render a splat (color or normal mode) or a mesh (normals) from a framed rig into PNGs."""
    out_dir.mkdir(parents=True, exist_ok=True)
    if (splat is None) == (mesh is None):
        raise ValidationError("render needs exactly one of --splat or --mesh")
    if splat is not None:
        gs = load_gaussians_ply(splat)
        cams = rig_for(gs.centers, rig, size)
        images = [render_gaussians(gs, c, mode=mode).image for c in cams]
    else:
        tm = load_mesh(mesh)
        cams = rig_for(tm.vertices, rig, size)
        images = [render_mesh(tm, c).image for c in cams]
    paths = []
    for k, img in enumerate(images):
        p = out_dir / f"view_{k}.png"
        save_png(np.clip(img, 0, 1), p)
        paths.append(p)
    save_cameras(cams, out_dir / "cameras.json")
    return paths


def write_weights(out: Path, q: int, geo: int, tex: int, base: int, attn: int, seed: int) -> None:
    init_netshell_weights(q, geo, tex, base, seed, attn).save(out)


def encode_image_file(image_path: Path, stack_path: Path, weights_path: Path, out: Path) -> dict:
    cam = load_cameras(cameras_path(stack_path))[0]
    img = load_png(image_path)
    if img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    if img.shape[1:] != (cam.height, cam.width):
        log.info("resizing image from=%dx%d to=%dx%d", img.shape[1], img.shape[2], cam.height, cam.width)
        img = resize(img, (3, cam.height, cam.width), order=1, mode="edge", anti_aliasing=False)
    w = NetshellWeights.load(weights_path)
    feat = texture_encode(img, plucker_map(cam).data, w.texture_encoder)
    save_tensor(feat, out)
    return {"channels": int(feat.shape[0])}


def netshell_run(geo_path: Path, tex_path: Path, weights_path: Path, out_c: Path, out_n: Path) -> dict:
    stack = load_tensor(geo_path)
    cams = load_cameras(cameras_path(geo_path))
    tex = load_tensor(tex_path)
    w = NetshellWeights.load(weights_path)
    if w.geo_w.shape[1] != stack.shape[1] + 6:
        raise ValidationError(
            f"geometry weights expect {w.geo_w.shape[1] - 6} stack channels, {geo_path} has {stack.shape[1]}"
        )
    geo = encode_stack(stack, w.geo_w, w.geo_b, plucker=[plucker_map(c).data for c in cams])
    gmap_c, gmap_n = dual_unet_forward(geo, tex, w.unet)
    front = cams[0]
    gs_c = decode_gaussian_map(gmap_c, front)
    gs_n = decode_gaussian_map(gmap_n, front)
    for gs, name in ((gs_c, "texture"), (gs_n, "normal")):
        if len(gs) == 0:
            raise ValidationError(f"{name} branch decoded no Gaussians above the opacity floor")
    save_gaussians_ply(gs_c, out_c)
    save_gaussians_ply(gs_n, out_n)
    log.info("netshell decoded texture=%d normal=%d", len(gs_c), len(gs_n))
    return {"n_texture": len(gs_c), "n_normal": len(gs_n)}


def remesh_views(gs: GaussianSet, rig: str, size: int, explicit: Optional[list] = None) -> Optional[list]:
    if explicit:
        return [OrthoCamera.from_dict(d) for d in explicit]
    if rig == "ring8":
        return None  # remesh frames its own ring
    lo, hi = gaussian_bounds(gs, pad_sigmas=0.0)
    center = 0.5 * (lo + hi)
    extent = default_views(gs, 1)[0].half_width
    return make_camera_rig(rig, size=size, extent=extent, center=center)


def remesh_file(
    splat_path: Path, out_mesh: Path, report_path: Optional[Path], make_config: Callable[[GaussianSet], RemeshConfig]
) -> RemeshReport:
    """``make_config`` receives the loaded Gaussians so camera framing can depend on them."""
    gs = load_gaussians_ply(splat_path)
    mesh, report = remesh(gs, make_config(gs))
    save_mesh(mesh, out_mesh)
    if report_path is not None:
        Path(report_path).write_text(report.to_json() + "\n")
    return report


def eval_geometry_files(pred: Path, gt: Path, tau: float, samples: int, seed: int, workers: int = 1) -> metrics.GeomReport:
    return metrics.evaluate_geometry(load_mesh(pred), load_mesh(gt), tau=tau, samples=samples, seed=seed, workers=workers)


def eval_image_files(pred: Path, gt: Path) -> metrics.ImageReport:
    return metrics.evaluate_image(load_png(pred), load_png(gt))
