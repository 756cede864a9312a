"""Pixel-aligned decoding of 14-channel network maps into Gaussians."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..ops import sigmoid, softplus
from ..splatcore import GaussianSet, OrthoCamera, ValidationError

# Channel layout of a 14xHxW Gaussian map.
OFFSET = slice(0, 3)  # x, y: in-plane offsets; z: depth along the pixel ray
SCALE = slice(3, 6)
ROTATION = slice(6, 10)  # quaternion (w, x, y, z)
OPACITY = 10
COLOR = slice(11, 14)


@dataclass(frozen=True)
class GaussianMapDecodeSpec:
    """Activations and ray anchoring for decoding.

    Center = pixel ray origin + depth * view direction + in-plane offset, with
    depth = default_depth + depth_range * tanh(c2) and in-plane offsets
    offset_scale * tanh(c0, c1) along the camera x and y axes. ``None`` values
    resolve per camera: default_depth to the middle of [near, far],
    depth_range and offset_scale to 4 and 1 pixel pitches, scale_mult to one
    pixel pitch.
    """

    default_depth: Optional[float] = None
    depth_range: Optional[float] = None
    offset_scale: Optional[float] = None
    scale_mult: Optional[float] = None
    min_scale: float = 1e-6
    opacity_floor: float = 0.01

    def resolve(self, camera: OrthoCamera) -> dict:
        pitch = max(camera.pixel_pitch)
        return {
            "default_depth": 0.5 * (camera.near + camera.far) if self.default_depth is None else self.default_depth,
            "depth_range": 4.0 * pitch if self.depth_range is None else self.depth_range,
            "offset_scale": pitch if self.offset_scale is None else self.offset_scale,
            "scale_mult": pitch if self.scale_mult is None else self.scale_mult,
        }


def decode_gaussian_map(
    gmap: np.ndarray, camera: OrthoCamera, spec: Optional[GaussianMapDecodeSpec] = None, units: str = "cm"
) -> GaussianSet:
    """One Gaussian per pixel whose opacity exceeds the floor, in row-major pixel order."""
    spec = spec or GaussianMapDecodeSpec()
    gmap = np.asarray(gmap, dtype=np.float64)
    if gmap.shape != (14, camera.height, camera.width):
        raise ValidationError(f"map shape {gmap.shape} != (14, {camera.height}, {camera.width})")
    bad = ~np.isfinite(gmap).all(axis=(1, 2))
    if bad.any():
        raise ValidationError(f"non-finite values in channel {int(np.argmax(bad))}")
    p = spec.resolve(camera)
    flat = gmap.reshape(14, -1)

    opacity = sigmoid(flat[OPACITY])
    keep = opacity > spec.opacity_floor
    flat = flat[:, keep]
    origins = camera.pixel_ray_origins().reshape(-1, 3)[keep]

    off = np.tanh(flat[OFFSET])
    depth = p["default_depth"] + p["depth_range"] * off[2]
    right, up = camera.rotation[0], camera.rotation[1]
    centers = (
        origins
        + depth[:, None] * camera.view_direction
        + p["offset_scale"] * (off[0][:, None] * right + off[1][:, None] * up)
    )
    scales = np.maximum(p["scale_mult"] * softplus(flat[SCALE]), spec.min_scale).T
    q = flat[ROTATION].T
    norm = np.linalg.norm(q, axis=1)
    q = np.where(norm[:, None] > 1e-12, q / np.where(norm > 1e-12, norm, 1.0)[:, None], [1.0, 0.0, 0.0, 0.0])
    colors = sigmoid(flat[COLOR]).T
    return GaussianSet(centers, scales, q, opacity[keep], colors, units=units)
