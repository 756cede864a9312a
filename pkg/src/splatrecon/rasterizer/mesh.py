"""Triangle-mesh renderer: hard z-buffered normals plus a soft signed-distance silhouette.

The soft silhouette is ``sigmoid(D / sigma_edge)`` where ``D`` is the signed
pixel distance from a pixel center to the nearest projected silhouette edge
(positive inside the hard coverage). Silhouette edges are boundary edges and
edges whose two faces face opposite ways relative to the camera, kept only
where they bound the projected mesh rather than fold inside it.

Gradients of the normal and mask L2 losses are analytic. Pixel-to-face
assignment, coverage, and the nearest-edge choice are held fixed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..splatcore import OrthoCamera, TriMesh, ValidationError
from .gaussians import RenderOutput, SoftRenderConfig

@dataclass
class MeshTopology:
    """Edge/face incidence reused across renders of meshes with fixed faces."""

    edges: np.ndarray  # (E, 2)
    edge_faces: np.ndarray  # (E, 2), -1 where an edge has one face
    nonmanifold: np.ndarray  # (E,) bool, edges with more than two faces

    @classmethod
    def from_faces(cls, faces: np.ndarray) -> "MeshTopology":
        f = np.asarray(faces)
        nf = len(f)
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        owner = np.tile(np.arange(nf), 3)
        edges, inverse, counts = np.unique(e, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        order = np.argsort(inverse, kind="stable")
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        edge_faces = np.full((len(edges), 2), -1, dtype=np.int64)
        edge_faces[:, 0] = owner[order[starts]]
        two = counts >= 2
        edge_faces[two, 1] = owner[order[starts[two] + 1]]
        return cls(edges, edge_faces, counts > 2)


@dataclass
class MeshRender(RenderOutput):
    """Mesh render plus the discrete state that gradients treat as constant."""

    coverage: np.ndarray = None  # (H, W) bool
    face_id: np.ndarray = None  # (H, W) int, -1 where uncovered
    signed_distance: np.ndarray = None  # (H, W) pixels
    nearest_edge: np.ndarray = None  # (H, W) index into topology.edges, -1 if no silhouette
    edge_t: np.ndarray = None  # (H, W) closest-point parameter on the nearest edge
    silhouette_edges: np.ndarray = None  # indices into topology.edges
    topology: MeshTopology = None


def _project_pixels(mesh: TriMesh, camera: OrthoCamera):
    pc = camera.to_camera(mesh.vertices)
    sx = camera.width / (2.0 * camera.half_width)
    sy = camera.height / (2.0 * camera.half_height)
    px = (pc[:, 0] + camera.half_width) * sx
    py = (camera.half_height - pc[:, 1]) * sy
    return px, py, -pc[:, 2], sx, sy


def _rasterize(faces, px, py, depth, camera):
    """Z-buffered coverage at pixel centers. Returns (face_id (H,W), depth (H,W))."""
    h, w = camera.height, camera.width
    fx, fy, fz = px[faces], py[faces], depth[faces]
    j0 = np.maximum(np.ceil(fx.min(axis=1) - 0.5).astype(np.int64), 0)
    j1 = np.minimum(np.floor(fx.max(axis=1) - 0.5).astype(np.int64), w - 1)
    i0 = np.maximum(np.ceil(fy.min(axis=1) - 0.5).astype(np.int64), 0)
    i1 = np.minimum(np.floor(fy.max(axis=1) - 0.5).astype(np.int64), h - 1)
    nx = np.maximum(j1 - j0 + 1, 0)
    ny = np.maximum(i1 - i0 + 1, 0)
    counts = nx * ny
    face_id = np.full(h * w, -1, dtype=np.int64)
    zbuf = np.full(h * w, np.inf)
    total = int(counts.sum())
    if total == 0:
        return face_id.reshape(h, w), zbuf.reshape(h, w)

    fidx = np.repeat(np.arange(len(faces)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    jj = j0[fidx] + local % nx[fidx]
    ii = i0[fidx] + local // nx[fidx]
    cx = jj + 0.5
    cy = ii + 0.5

    x0, x1, x2 = fx[fidx, 0], fx[fidx, 1], fx[fidx, 2]
    y0, y1, y2 = fy[fidx, 0], fy[fidx, 1], fy[fidx, 2]
    area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    w0 = (x1 - cx) * (y2 - cy) - (x2 - cx) * (y1 - cy)
    w1 = (x2 - cx) * (y0 - cy) - (x0 - cx) * (y2 - cy)
    w2 = (x0 - cx) * (y1 - cy) - (x1 - cx) * (y0 - cy)
    pos = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
    neg = (w0 <= 0) & (w1 <= 0) & (w2 <= 0)
    inside = (pos | neg) & (area != 0)
    safe = np.where(area != 0, area, 1.0)
    z = (w0 * fz[fidx, 0] + w1 * fz[fidx, 1] + w2 * fz[fidx, 2]) / safe
    inside &= (z >= camera.near) & (z <= camera.far)

    fidx, z = fidx[inside], z[inside]
    pix = ii[inside] * w + jj[inside]
    order = np.lexsort((fidx, z, pix))
    ps = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = ps[1:] != ps[:-1]
    face_id[ps[first]] = fidx[order[first]]
    zbuf[ps[first]] = z[order[first]]
    return face_id.reshape(h, w), zbuf.reshape(h, w)


def _points_covered(qx, qy, faces, px, py):
    """True where a query point lies strictly inside some projected triangle.

    Triangles are binned by the unit cells their bounding boxes touch and each
    query only tests the triangles binned in its own cell.
    """
    fx, fy = px[faces], py[faces]
    cx0 = np.floor(fx.min(axis=1)).astype(np.int64)
    cx1 = np.floor(fx.max(axis=1)).astype(np.int64)
    cy0 = np.floor(fy.min(axis=1)).astype(np.int64)
    cy1 = np.floor(fy.max(axis=1)).astype(np.int64)
    ox, oy = int(min(cx0.min(), np.floor(qx.min()))), int(min(cy0.min(), np.floor(qy.min())))
    span = int(max(cx1.max(), np.floor(qx.max()))) - ox + 1
    nx, ny = cx1 - cx0 + 1, cy1 - cy0 + 1
    counts = nx * ny
    fidx = np.repeat(np.arange(len(faces)), counts)
    local = np.arange(int(counts.sum())) - np.repeat(np.cumsum(counts) - counts, counts)
    keys = (cy0[fidx] + local // nx[fidx] - oy) * span + (cx0[fidx] + local % nx[fidx] - ox)
    order = np.argsort(keys, kind="stable")
    keys, fidx = keys[order], fidx[order]

    qkey = (np.floor(qy).astype(np.int64) - oy) * span + (np.floor(qx).astype(np.int64) - ox)
    lo = np.searchsorted(keys, qkey, side="left")
    n = np.searchsorted(keys, qkey, side="right") - lo
    covered = np.zeros(len(qx), dtype=bool)
    if n.sum() == 0:
        return covered
    qi = np.repeat(np.arange(len(qx)), n)
    f = fidx[np.repeat(lo, n) + np.arange(int(n.sum())) - np.repeat(np.cumsum(n) - n, n)]
    x, y = qx[qi], qy[qi]
    x0, x1, x2 = fx[f, 0], fx[f, 1], fx[f, 2]
    y0, y1, y2 = fy[f, 0], fy[f, 1], fy[f, 2]
    w0 = (x1 - x) * (y2 - y) - (x2 - x) * (y1 - y)
    w1 = (x2 - x) * (y0 - y) - (x0 - x) * (y2 - y)
    w2 = (x0 - x) * (y1 - y) - (x1 - x) * (y0 - y)
    inside = ((w0 > 0) & (w1 > 0) & (w2 > 0)) | ((w0 < 0) & (w1 < 0) & (w2 < 0))
    covered[qi[inside]] = True
    return covered


_OUTLINE_OFFSET = 1e-3  # pixels
_OUTLINE_SAMPLES = (0.25, 0.5, 0.75)


def _silhouette_edges(topo: MeshTopology, facing: np.ndarray, faces, px, py) -> np.ndarray:
    """Edges on the outline of the projected mesh.

    Candidates are boundary edges, non-manifold edges and edges whose faces
    face opposite ways. A candidate is dropped when points just outside it
    (away from its own faces) are covered by other triangles, since it then
    folds inside the projection rather than bounding it.
    """
    f0, f1 = topo.edge_faces[:, 0], topo.edge_faces[:, 1]
    boundary = f1 < 0
    s0 = facing[f0] > 0
    s1 = np.where(boundary, s0, facing[np.maximum(f1, 0)] > 0)
    cand = np.nonzero(boundary | (s0 != s1) | topo.nonmanifold)[0]
    if len(cand) == 0:
        return cand
    e = topo.edges[cand]
    opp = faces[f0[cand]].sum(axis=1) - e.sum(axis=1)
    ax, ay = px[e[:, 0]], py[e[:, 0]]
    ux, uy = px[e[:, 1]] - ax, py[e[:, 1]] - ay
    side = np.sign(ux * (py[opp] - ay) - uy * (px[opp] - ax))
    length = np.hypot(ux, uy)
    testable = (side != 0) & (length > 0) & ~topo.nonmanifold[cand]
    scale = np.where(testable, -side * _OUTLINE_OFFSET / np.where(length > 0, length, 1.0), 0.0)
    nx, ny = -uy * scale, ux * scale
    t = np.array(_OUTLINE_SAMPLES)[:, None]
    qx = (ax + t * ux + nx).ravel()
    qy = (ay + t * uy + ny).ravel()
    covered = _points_covered(qx, qy, faces, px, py).reshape(len(t), -1).all(axis=0)
    return cand[~(covered & testable)]


def _segment_terms(ax, ay, bx, by):
    ex, ey = bx - ax, by - ay
    len2 = ex * ex + ey * ey
    inv_len2 = np.where(len2 > 0, 1.0 / np.where(len2 > 0, len2, 1.0), 0.0)
    return ex, ey, inv_len2


def _point_segment(qx, qy, ax, ay, ex, ey, inv_len2):
    """Squared distance and closest-point parameter for broadcast point/segment pairs."""
    t = np.clip(((qx - ax) * ex + (qy - ay) * ey) * inv_len2, 0.0, 1.0)
    dx = qx - (ax + t * ex)
    dy = qy - (ay + t * ey)
    return dx * dx + dy * dy, t


def _nearest_segments(cx, cy, ax, ay, bx, by, rows_per_block):
    """Per query point: (index, distance, t) of the closest segment. Exhaustive search in blocks."""
    n = len(cx)
    best = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    tpar = np.empty(n)
    ex, ey, inv_len2 = _segment_terms(ax, ay, bx, by)
    step = max(1, rows_per_block)
    for s in range(0, n, step):
        d2, t = _point_segment(cx[s:s + step, None], cy[s:s + step, None], ax, ay, ex, ey, inv_len2)
        k = np.argmin(d2, axis=1)
        r = np.arange(len(k))
        best[s:s + step] = k
        dist[s:s + step] = np.sqrt(d2[r, k])
        tpar[s:s + step] = t[r, k]
    return best, dist, tpar


def _nearest_segments_tiled(h, w, ax, ay, bx, by, tile):
    """Same result as the exhaustive search over the pixel grid, pruned per square tile.

    For a tile with center c and pixel-center radius rb, the closest segment
    of any pixel in it is within ``min_s d(c, s) + 2 rb`` of c, so other
    segments are skipped. Candidates keep index order, so ties resolve as in
    the exhaustive search.
    """
    best = np.empty((h, w), dtype=np.int64)
    dist = np.empty((h, w))
    tpar = np.empty((h, w))
    ex, ey, inv_len2 = _segment_terms(ax, ay, bx, by)
    for i0 in range(0, h, tile):
        i1 = min(i0 + tile, h)
        for j0 in range(0, w, tile):
            j1 = min(j0 + tile, w)
            cx, cy = 0.5 * (j0 + j1), 0.5 * (i0 + i1)
            rb = 0.5 * np.hypot(j1 - j0 - 1, i1 - i0 - 1)
            dc = np.sqrt(_point_segment(cx, cy, ax, ay, ex, ey, inv_len2)[0])
            cand = np.nonzero(dc <= dc.min() + 2.0 * rb + 1e-9 * (1.0 + dc.min()))[0]
            qx = np.broadcast_to(np.arange(j0, j1) + 0.5, (i1 - i0, j1 - j0)).reshape(-1, 1)
            qy = np.repeat(np.arange(i0, i1) + 0.5, j1 - j0)[:, None]
            d2, t = _point_segment(qx, qy, ax[cand], ay[cand], ex[cand], ey[cand], inv_len2[cand])
            k = np.argmin(d2, axis=1)
            r = np.arange(len(k))
            best[i0:i1, j0:j1] = cand[k].reshape(i1 - i0, j1 - j0)
            dist[i0:i1, j0:j1] = np.sqrt(d2[r, k]).reshape(i1 - i0, j1 - j0)
            tpar[i0:i1, j0:j1] = t[r, k].reshape(i1 - i0, j1 - j0)
    return best, dist, tpar


def render_mesh(
    mesh: TriMesh,
    camera: OrthoCamera,
    config: Optional[SoftRenderConfig] = None,
    topology: Optional[MeshTopology] = None,
) -> MeshRender:
    """Render camera-space face normals (mapped to [0,1]) and a soft silhouette."""
    cfg = config or SoftRenderConfig()
    if mesh.n_faces == 0:
        raise ValidationError("cannot render a mesh without faces")
    cross_world = mesh.face_cross()
    norms = np.linalg.norm(cross_world, axis=1)
    if (norms <= 0).any():
        raise ValidationError(f"degenerate face {int(np.argmax(norms <= 0))} (zero area)")
    topo = topology or MeshTopology.from_faces(mesh.faces)
    h, w = camera.height, camera.width

    px, py, depth, _, _ = _project_pixels(mesh, camera)
    face_id, zbuf = _rasterize(mesh.faces, px, py, depth, camera)
    coverage = face_id >= 0

    n_cam = (cross_world / norms[:, None]) @ camera.rotation.T
    image = np.zeros((3, h, w))
    image[:, coverage] = ((n_cam[face_id[coverage]] + 1.0) * 0.5).T

    sil = _silhouette_edges(topo, n_cam[:, 2], mesh.faces, px, py)
    if len(sil):
        e = topo.edges[sil]
        k, dist, tpar = _nearest_segments_tiled(
            h, w, px[e[:, 0]], py[e[:, 0]], px[e[:, 1]], py[e[:, 1]], cfg.tile_size
        )
        nearest = sil[k]
    else:
        nearest = np.full((h, w), -1, dtype=np.int64)
        dist = np.full((h, w), np.inf)
        tpar = np.zeros((h, w))
    signed = np.where(coverage, dist, -dist)
    alpha = 0.5 * (1.0 + np.tanh(0.5 * signed / cfg.sigma_edge))

    return MeshRender(
        image=image,
        alpha=alpha[None],
        depth=zbuf[None],
        stats={"silhouette_edges": int(len(sil)), "covered": int(coverage.sum())},
        coverage=coverage,
        face_id=face_id,
        signed_distance=signed,
        nearest_edge=nearest,
        edge_t=tpar,
        silhouette_edges=sil,
        topology=topo,
    )


@dataclass
class MeshLossGrad:
    l_normal: float
    l_mask: float
    grad: np.ndarray  # (V, 3) gradient of l_normal + l_mask
    grad_normal: np.ndarray
    grad_mask: np.ndarray
    render: MeshRender
    counted_pixels: int


def render_mesh_with_grads(
    mesh: TriMesh,
    camera: OrthoCamera,
    config: Optional[SoftRenderConfig],
    target_normal: np.ndarray,
    target_mask: np.ndarray,
    topology: Optional[MeshTopology] = None,
    target_mask_threshold: float = 0.5,
) -> MeshLossGrad:
    """Normal and mask L2 losses against targets, with analytic per-vertex gradients.

    ``l_normal`` averages the per-pixel squared colour difference (summed over
    the 3 channels) over pixels where both the rendered and target masks
    exceed 0.5. ``l_mask`` is the mean squared alpha difference over all
    pixels.
    """
    cfg = config or SoftRenderConfig()
    tn = np.asarray(target_normal, dtype=np.float64)
    tm = np.asarray(target_mask, dtype=np.float64)
    if tm.ndim == 3:
        tm = tm[0]
    h, w = camera.height, camera.width
    if tn.shape != (3, h, w) or tm.shape != (h, w):
        raise ValidationError(
            f"target resolution mismatch: camera {h}x{w}, normal {tn.shape}, mask {tm.shape}"
        )
    r = render_mesh(mesh, camera, cfg, topology)
    v = mesh.vertices
    faces = mesh.faces
    px, py, _, sx, sy = _project_pixels(mesh, camera)

    # Normal term.
    counted = r.coverage & (tm > target_mask_threshold)
    n_count = int(counted.sum())
    grad_normal = np.zeros_like(v)
    l_normal = 0.0
    if n_count:
        diff = r.image[:, counted] - tn[:, counted]  # (3, P)
        l_normal = float((diff * diff).sum() / n_count)
        # d(image)/d(n_cam) = 1/2
        g_ncam = (diff * (2.0 / n_count) * 0.5).T
        fids = r.face_id[counted]
        g_face_cam = np.zeros((mesh.n_faces, 3))
        np.add.at(g_face_cam, fids, g_ncam)
        used = np.unique(fids)
        g_nw = g_face_cam[used] @ camera.rotation  # back to world frame
        tri = faces[used]
        e1 = v[tri[:, 1]] - v[tri[:, 0]]
        e2 = v[tri[:, 2]] - v[tri[:, 0]]
        c = np.cross(e1, e2)
        cn = np.linalg.norm(c, axis=1, keepdims=True)
        n = c / cn
        g_c = (g_nw - n * (n * g_nw).sum(axis=1, keepdims=True)) / cn
        g_e1 = np.cross(e2, g_c)
        g_e2 = np.cross(g_c, e1)
        np.add.at(grad_normal, tri[:, 1], g_e1)
        np.add.at(grad_normal, tri[:, 2], g_e2)
        np.add.at(grad_normal, tri[:, 0], -(g_e1 + g_e2))

    # Mask term.
    alpha = r.alpha[0]
    res = alpha - tm
    l_mask = float((res * res).mean())
    grad_mask = np.zeros_like(v)
    valid = (r.nearest_edge >= 0) & np.isfinite(r.signed_distance) & (r.signed_distance != 0)
    if valid.any():
        g_alpha = 2.0 * res[valid] / (h * w)
        g_d = g_alpha * alpha[valid] * (1.0 - alpha[valid]) / cfg.sigma_edge
        sign = np.where(r.coverage[valid], 1.0, -1.0)
        g_dist = g_d * sign
        e = r.topology.edges[r.nearest_edge[valid]]
        t = r.edge_t[valid]
        ii, jj = np.nonzero(valid)
        qx, qy = jj + 0.5, ii + 0.5
        cx = px[e[:, 0]] + t * (px[e[:, 1]] - px[e[:, 0]])
        cy = py[e[:, 0]] + t * (py[e[:, 1]] - py[e[:, 0]])
        dist = np.abs(r.signed_distance[valid])
        ux, uy = (qx - cx) / dist, (qy - cy) / dist
        # d dist / d a = -(1 - t) u, d dist / d b = -t u (closest-point envelope).
        g_px = np.zeros(len(v))
        g_py = np.zeros(len(v))
        np.add.at(g_px, e[:, 0], -g_dist * (1.0 - t) * ux)
        np.add.at(g_py, e[:, 0], -g_dist * (1.0 - t) * uy)
        np.add.at(g_px, e[:, 1], -g_dist * t * ux)
        np.add.at(g_py, e[:, 1], -g_dist * t * uy)
        # px = sx * x_cam + const, py = -sy * y_cam + const, x_cam = R[0] . v
        grad_mask = np.outer(g_px * sx, camera.rotation[0]) - np.outer(g_py * sy, camera.rotation[1])

    return MeshLossGrad(
        l_normal=l_normal,
        l_mask=l_mask,
        grad=grad_normal + grad_mask,
        grad_normal=grad_normal,
        grad_mask=grad_mask,
        render=r,
        counted_pixels=n_count,
    )
