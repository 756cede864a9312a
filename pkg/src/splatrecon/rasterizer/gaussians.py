"""Software 3D Gaussian splat renderer for orthographic cameras."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from ..splatcore import GaussianSet, OrthoCamera, ValidationError

log = logging.getLogger(__name__)

_SINGULAR_EPS = 1e-6


@dataclass(frozen=True)
class SoftRenderConfig:
    """Renderer knobs shared by the splat and mesh renderers.

    sigma_edge: silhouette softness of the mesh renderer, in pixels.
    alpha_cutoff: per-pixel Gaussian alphas below this are dropped.
    tile_size: square pixel tile used to prune the mesh silhouette distance search.
    normal_alpha_floor: normal-mode pixels with accumulated alpha at or
        below this stay empty instead of being renormalised.
    renormalize_normals / normals_to_camera: normal-mode decoding options.
    """

    sigma_edge: float = 1.0
    alpha_cutoff: float = 1.0 / 255.0
    tile_size: int = 16
    normal_alpha_floor: float = 0.05
    renormalize_normals: bool = True
    normals_to_camera: bool = True

    def __post_init__(self) -> None:
        if not self.sigma_edge > 0:
            raise ValidationError("sigma_edge must be positive")
        if not 0 < self.alpha_cutoff < 1:
            raise ValidationError("alpha_cutoff must lie in (0, 1)")
        if self.tile_size < 1:
            raise ValidationError("tile_size must be >= 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RenderOutput:
    """Render result. ``image`` is 3xHxW, ``alpha`` and ``depth`` are 1xHxW (depth is +inf where empty)."""

    image: np.ndarray
    alpha: np.ndarray
    depth: np.ndarray
    stats: dict = field(default_factory=dict)


def render_gaussians(
    gaussians: GaussianSet,
    camera: OrthoCamera,
    mode: Literal["color", "normal"] = "color",
    config: Optional[SoftRenderConfig] = None,
) -> RenderOutput:
    """Depth-sorted front-to-back alpha compositing of projected Gaussian footprints.

    Each Gaussian's footprint uses the x/y block of its camera-space
    covariance (the orthographic Jacobian is the identity on x and y). The
    per-pixel weight of Gaussian i is ``a_i * prod_{j<i}(1 - a_j)`` with
    ``a_i = opacity_i * exp(-d^T S^-1 d / 2)``; alpha is the sum of weights
    and depth is the weight-averaged depth.

    In ``normal`` mode colours are decoded as ``n = 2c - 1``, rotated into the
    camera frame, composited, renormalised where alpha exceeds
    ``config.normal_alpha_floor`` and re-encoded as ``(n + 1) / 2``.
    """
    if mode not in ("color", "normal"):
        raise ValueError(f"unknown render mode {mode!r}")
    cfg = config or SoftRenderConfig()
    if len(gaussians) == 0:
        raise ValidationError("cannot render an empty gaussian set")
    h, w = camera.height, camera.width
    sx = w / (2.0 * camera.half_width)
    sy = h / (2.0 * camera.half_height)

    pc = camera.to_camera(gaussians.centers)
    depth = -pc[:, 2]
    px = (pc[:, 0] + camera.half_width) * sx
    py = (camera.half_height - pc[:, 1]) * sy
    cov_cam = camera.rotation @ gaussians.covariances() @ camera.rotation.T
    # Pixel-space covariance: x scales by sx, y by -sy.
    a = cov_cam[:, 0, 0] * sx * sx
    b = -cov_cam[:, 0, 1] * sx * sy
    c = cov_cam[:, 1, 1] * sy * sy
    det = a * c - b * b
    singular = det <= _SINGULAR_EPS * _SINGULAR_EPS
    n_singular = int(singular.sum())
    if n_singular:
        eps_pix = np.array([_SINGULAR_EPS * sx * sx, _SINGULAR_EPS * sy * sy])
        a = np.where(singular, a + eps_pix[0], a)
        c = np.where(singular, c + eps_pix[1], c)
        det = a * c - b * b
        log.warning("clamped singular 2D covariances count=%d", n_singular)
    inv_a, inv_b, inv_c = c / det, -b / det, a / det
    # Beyond this pixel radius every alpha is below the cutoff, so the box loses nothing.
    sigma_max = np.sqrt(0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0)))
    ratio = gaussians.opacities / cfg.alpha_cutoff
    radius = np.where(ratio > 1, sigma_max * np.sqrt(2.0 * np.log(np.maximum(ratio, 1.0))), -1.0) + 1.0

    if mode == "normal":
        normals = 2.0 * gaussians.colors - 1.0
        if cfg.normals_to_camera:
            normals = normals @ camera.rotation.T
        colors = normals
    else:
        colors = gaussians.colors

    visible = (depth >= camera.near) & (depth <= camera.far)
    idx = np.nonzero(visible)[0]
    order = idx[np.lexsort((idx, depth[idx]))]

    trans = np.ones((h, w))
    acc_alpha = np.zeros((h, w))
    acc_color = np.zeros((3, h, w))
    acc_depth = np.zeros((h, w))
    cutoff = cfg.alpha_cutoff
    for g in order:
        r = radius[g]
        if r <= 0:
            continue
        j0 = max(int(np.floor(px[g] - r)), 0)
        j1 = min(int(np.ceil(px[g] + r)) + 1, w)
        i0 = max(int(np.floor(py[g] - r)), 0)
        i1 = min(int(np.ceil(py[g] + r)) + 1, h)
        if j0 >= j1 or i0 >= i1:
            continue
        dx = (np.arange(j0, j1) + 0.5 - px[g])[None, :]
        dy = (np.arange(i0, i1) + 0.5 - py[g])[:, None]
        power = -0.5 * (inv_a[g] * dx * dx + 2.0 * inv_b[g] * dx * dy + inv_c[g] * dy * dy)
        alpha = gaussians.opacities[g] * np.exp(power)
        alpha[alpha < cutoff] = 0.0
        t = trans[i0:i1, j0:j1]
        wgt = alpha * t
        acc_alpha[i0:i1, j0:j1] += wgt
        acc_depth[i0:i1, j0:j1] += wgt * depth[g]
        acc_color[:, i0:i1, j0:j1] += wgt[None] * colors[g][:, None, None]
        trans[i0:i1, j0:j1] = t - wgt

    filled = acc_alpha > 0
    out_depth = np.full((h, w), np.inf)
    out_depth[filled] = acc_depth[filled] / acc_alpha[filled]

    if mode == "normal":
        image = np.zeros((3, h, w))
        keep = acc_alpha > cfg.normal_alpha_floor
        n = acc_color[:, keep]
        if cfg.renormalize_normals:
            norm = np.linalg.norm(n, axis=0)
            ok = norm > 1e-12
            n[:, ok] /= norm[ok]
            n[:, ~ok] = 0.0
        image[:, keep] = np.clip((n + 1.0) * 0.5, 0.0, 1.0)
    else:
        image = acc_color

    return RenderOutput(
        image=image,
        alpha=acc_alpha[None],
        depth=out_depth[None],
        stats={"singular_covariances": n_singular, "rendered": int(len(order))},
    )
