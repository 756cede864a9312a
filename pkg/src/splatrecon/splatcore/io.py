"""File I/O: 3DGS-style Gaussian PLY, mesh OBJ/PLY, flat tensors and PNG previews."""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np
from plyfile import PlyData, PlyElement

from .types import FormatError, GaussianSet, SplatError, TriMesh, ValidationError

PathLike = Union[str, Path]

SH_C0 = 0.28209479177387814
GAUSSIAN_PLY_FIELDS = (
    "x", "y", "z",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)
_OPACITY_EPS = 1e-7


def _read_ply(path: PathLike) -> PlyData:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        return PlyData.read(str(path))
    except Exception as exc:  # plyfile raises several unrelated types
        raise FormatError(f"{path}: not a readable PLY file ({exc})") from exc


def load_gaussians_ply(path: PathLike, units: str = "cm") -> GaussianSet:
    """Read a Gaussian splat PLY (binary little-endian or ASCII).

    Stored scales are log-space and opacities are logits; both are activated
    here. Colors come from the degree-0 SH coefficients ``f_dc_*`` and are
    clipped to [0, 1]; higher SH bands are ignored.
    """
    ply = _read_ply(path)
    if "vertex" not in ply:
        raise FormatError("missing element vertex")
    el = ply["vertex"]
    names = {p.name for p in el.properties}
    for name in GAUSSIAN_PLY_FIELDS:
        if name not in names:
            raise FormatError(f"missing attribute {name}")
    col = {name: np.asarray(el[name], dtype=np.float64) for name in GAUSSIAN_PLY_FIELDS}
    raw = np.stack([col[n] for n in GAUSSIAN_PLY_FIELDS], axis=1)
    bad = ~np.isfinite(raw).all(axis=1)
    if bad.any():
        raise ValidationError(f"non-finite field at gaussian index {int(np.argmax(bad))}")

    centers = raw[:, 0:3]
    colors = np.clip(0.5 + SH_C0 * raw[:, 3:6], 0.0, 1.0)
    opacities = 1.0 / (1.0 + np.exp(-raw[:, 6]))
    scales = np.exp(raw[:, 7:10])
    rotations = raw[:, 10:14]
    return GaussianSet(centers, scales, rotations, opacities, colors, units=units)


def save_gaussians_ply(gaussians: GaussianSet, path: PathLike, ascii: bool = False) -> None:
    """Write a Gaussian set with the 14 community attributes as float32 properties."""
    if len(gaussians) == 0:
        raise SplatError("empty gaussian set")
    o = np.clip(gaussians.opacities, _OPACITY_EPS, 1.0 - _OPACITY_EPS)
    values = {
        "x": gaussians.centers[:, 0],
        "y": gaussians.centers[:, 1],
        "z": gaussians.centers[:, 2],
        "f_dc_0": (gaussians.colors[:, 0] - 0.5) / SH_C0,
        "f_dc_1": (gaussians.colors[:, 1] - 0.5) / SH_C0,
        "f_dc_2": (gaussians.colors[:, 2] - 0.5) / SH_C0,
        "opacity": np.log(o) - np.log1p(-o),
        "scale_0": np.log(gaussians.scales[:, 0]),
        "scale_1": np.log(gaussians.scales[:, 1]),
        "scale_2": np.log(gaussians.scales[:, 2]),
        "rot_0": gaussians.rotations[:, 0],
        "rot_1": gaussians.rotations[:, 1],
        "rot_2": gaussians.rotations[:, 2],
        "rot_3": gaussians.rotations[:, 3],
    }
    arr = np.empty(len(gaussians), dtype=[(n, "<f4") for n in GAUSSIAN_PLY_FIELDS])
    for n in GAUSSIAN_PLY_FIELDS:
        arr[n] = values[n]
    PlyData([PlyElement.describe(arr, "vertex")], text=ascii, byte_order="<").write(str(path))


# -- meshes -----------------------------------------------------------------


def load_mesh(path: PathLike) -> TriMesh:
    """Load an OBJ or PLY triangle mesh. Polygons are fan-triangulated."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return _load_obj(path)
    if suffix == ".ply":
        return _load_mesh_ply(path)
    raise FormatError(f"unsupported mesh format {suffix!r}")


def save_mesh(mesh: TriMesh, path: PathLike) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        _save_obj(mesh, path)
    elif suffix == ".ply":
        _save_mesh_ply(mesh, path)
    else:
        raise FormatError(f"unsupported mesh format {suffix!r}")


def _load_obj(path: Path) -> TriMesh:
    verts: list[list[float]] = []
    colors: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    face_lines: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                try:
                    vals = [float(x) for x in parts[1:]]
                except ValueError as exc:
                    raise FormatError(f"{path.name}:{lineno}: malformed vertex line") from exc
                if len(vals) not in (3, 4, 6, 7):
                    raise FormatError(f"{path.name}:{lineno}: malformed vertex line")
                verts.append(vals[:3])
                if len(vals) >= 6:
                    colors.append(vals[-3:])
            elif tag == "f":
                if len(parts) < 4:
                    raise FormatError(f"{path.name}:{lineno}: malformed face line (fewer than 3 vertices)")
                idx = []
                for tok in parts[1:]:
                    head = tok.split("/")[0]
                    try:
                        k = int(head)
                    except ValueError as exc:
                        raise FormatError(f"{path.name}:{lineno}: malformed face line") from exc
                    if k == 0:
                        raise FormatError(f"{path.name}:{lineno}: malformed face line (index 0)")
                    idx.append(k - 1 if k > 0 else len(verts) + k)
                for j in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[j], idx[j + 1]))
                    face_lines.append(lineno)
    vc = np.asarray(colors) if colors and len(colors) == len(verts) else None
    faces_arr = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    try:
        return TriMesh(np.asarray(verts).reshape(-1, 3), faces_arr, vc)
    except ValidationError as exc:
        msg = str(exc)
        if msg.startswith("face ") and face_lines:
            k = int(msg.split()[1])
            raise ValidationError(f"{path.name}:{face_lines[k]}: {msg}") from exc
        if msg.startswith("degenerate face ") and face_lines:
            k = int(msg.split()[2])
            raise ValidationError(f"{path.name}:{face_lines[k]}: {msg}") from exc
        raise


def _save_obj(mesh: TriMesh, path: Path) -> None:
    lines = []
    if mesh.vertex_colors is None:
        lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist())
    else:
        for (x, y, z), (r, g, b) in zip(mesh.vertices.tolist(), mesh.vertex_colors.tolist()):
            lines.append(f"v {x!r} {y!r} {z!r} {r!r} {g!r} {b!r}")
    lines.extend(f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist())
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_mesh_ply(path: Path) -> TriMesh:
    ply = _read_ply(path)
    if "vertex" not in ply or "face" not in ply:
        raise FormatError("mesh PLY needs vertex and face elements")
    v = ply["vertex"]
    names = {p.name for p in v.properties}
    for n in ("x", "y", "z"):
        if n not in names:
            raise FormatError(f"missing attribute {n}")
    verts = np.stack([np.asarray(v[n], dtype=np.float64) for n in ("x", "y", "z")], axis=1)
    colors = None
    if {"red", "green", "blue"} <= names:
        colors = np.stack([np.asarray(v[n], dtype=np.float64) for n in ("red", "green", "blue")], axis=1)
        if v["red"].dtype == np.uint8:
            colors = colors / 255.0
    f = ply["face"]
    fnames = [p.name for p in f.properties]
    key = "vertex_indices" if "vertex_indices" in fnames else ("vertex_index" if "vertex_index" in fnames else None)
    if key is None:
        raise FormatError("missing attribute vertex_indices")
    tris = []
    for i, poly in enumerate(f[key]):
        poly = list(poly)
        if len(poly) < 3:
            raise FormatError(f"face {i}: fewer than 3 vertices")
        for j in range(1, len(poly) - 1):
            tris.append((poly[0], poly[j], poly[j + 1]))
    return TriMesh(verts, np.asarray(tris, dtype=np.int64).reshape(-1, 3), colors)


def _save_mesh_ply(mesh: TriMesh, path: Path) -> None:
    vdesc = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    if mesh.vertex_colors is not None:
        vdesc += [("red", "<f8"), ("green", "<f8"), ("blue", "<f8")]
    v = np.empty(mesh.n_vertices, dtype=vdesc)
    for k, n in enumerate(("x", "y", "z")):
        v[n] = mesh.vertices[:, k]
    if mesh.vertex_colors is not None:
        for k, n in enumerate(("red", "green", "blue")):
            v[n] = mesh.vertex_colors[:, k]
    f = np.empty(mesh.n_faces, dtype=[("vertex_indices", "<i4", (3,))])
    f["vertex_indices"] = mesh.faces
    PlyData(
        [PlyElement.describe(v, "vertex"), PlyElement.describe(f, "face")],
        byte_order="<",
    ).write(str(path))


# -- tensors ------------------------------------------------------------------

TENSOR_MAGIC = b"FTSR"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}


def save_tensor(array: np.ndarray, path: PathLike, dtype: str = "<f4") -> None:
    """Write a dense tensor: magic ``FTSR``, u8 dtype code, u8 rank, u16 pad, u32 dims, raw data."""
    dt = np.dtype(dtype)
    if dt not in _DTYPE_CODES:
        raise ValueError(f"unsupported tensor dtype {dtype}")
    a = np.ascontiguousarray(np.asarray(array), dtype=dt)
    header = TENSOR_MAGIC + struct.pack("<BBH", _DTYPE_CODES[dt], a.ndim, 0)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(a.tobytes())


def load_tensor(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != TENSOR_MAGIC:
        raise FormatError(f"{path}: bad tensor magic")
    code, ndim, _ = struct.unpack_from("<BBH", blob, 4)
    if code not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    shape = struct.unpack_from(f"<{ndim}I", blob, 8)
    offset = 8 + 4 * ndim
    dt = _DTYPES[code]
    count = int(np.prod(shape)) if shape else 1
    if len(blob) - offset != count * dt.itemsize:
        raise FormatError(f"{path}: tensor payload size does not match header shape {shape}")
    return np.frombuffer(blob, dtype=dt, count=count, offset=offset).reshape(shape).astype(np.float64)


def save_png(image: np.ndarray, path: PathLike, normalize: bool = False) -> Optional[dict]:
    """Save a (C,H,W) or (H,W) image as 8-bit PNG.

    With ``normalize`` the finite range is stretched to [0,1] and the
    original min/max are returned (and written to a ``.json`` sidecar).
    Non-finite entries become 0.
    """
    from PIL import Image

    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    finite = np.isfinite(a)
    meta = None
    if normalize:
        lo = float(a[finite].min()) if finite.any() else 0.0
        hi = float(a[finite].max()) if finite.any() else 0.0
        span = hi - lo if hi > lo else 1.0
        a = np.where(finite, (a - lo) / span, 0.0)
        meta = {"min": lo, "max": hi}
        Path(path).with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")
    a = np.where(np.isfinite(a), a, 0.0)
    a8 = np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)
    if a8.ndim == 3:
        a8 = np.moveaxis(a8, 0, -1)
        if a8.shape[-1] not in (3, 4):
            raise ValueError("colour PNG needs 3 or 4 channels")
    Image.fromarray(a8).save(path)
    return meta


def load_png(path: PathLike) -> np.ndarray:
    """Read a PNG into a float (C,H,W) array in [0,1]; alpha channels are dropped."""
    from PIL import Image

    with Image.open(path) as im:
        im = im.convert("RGB") if im.mode not in ("L", "RGB") else im
        a = np.asarray(im, dtype=np.float64) / 255.0
    return a[None] if a.ndim == 2 else np.moveaxis(a, -1, 0)
