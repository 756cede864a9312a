"""Named orthographic camera rigs."""

from __future__ import annotations

import numpy as np

from .types import OrthoCamera, ValidationError

RIGS = ("front3", "ring8")


def make_camera_rig(
    name: str,
    size: int = 512,
    extent: float = 1.0,
    center=(0.0, 0.0, 0.0),
    distance: float | None = None,
) -> list[OrthoCamera]:
    """Build a named rig framing a cube of half-size ``extent`` around ``center``.

    ``front3`` looks along -z, -x and -y (front, left, top). ``ring8`` looks
    inward from 8 azimuths 45 degrees apart at zero elevation, starting at -z.
    """
    if not extent > 0:
        raise ValidationError("rig extent must be positive")
    dist = 4.0 * extent if distance is None else distance
    kw = dict(center=center, extent=extent, size=size, distance=dist, depth_range=2 * dist)
    if name == "front3":
        return [
            OrthoCamera.looking_along([0, 0, -1], up=[0, 1, 0], **kw),
            OrthoCamera.looking_along([-1, 0, 0], up=[0, 1, 0], **kw),
            OrthoCamera.looking_along([0, -1, 0], up=[0, 0, -1], **kw),
        ]
    if name == "ring8":
        cams = []
        for k in range(8):
            theta = k * np.pi / 4
            d = [-np.sin(theta), 0.0, -np.cos(theta)]
            cams.append(OrthoCamera.looking_along(d, up=[0, 1, 0], **kw))
        return cams
    raise ValidationError(f"unknown camera rig {name!r} (known: {', '.join(RIGS)})")
