"""Region cropping and the texture encoder."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from skimage.transform import resize

from ..ops import conv2d, sigmoid
from ..splatcore import ValidationError

log = logging.getLogger(__name__)


def square_box(mask: np.ndarray) -> Optional[tuple[int, int, int]]:
    """(top, left, side) of the tight bounding box grown to a centred square; None if empty.

    The square may extend past the image; callers pad those pixels with zeros.
    """
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    if len(rows) == 0:
        return None
    r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
    h, w = r1 - r0, c1 - c0
    side = max(h, w)
    return int(r0 - (side - h) // 2), int(c0 - (side - w) // 2), int(side)


def crop_square(image: np.ndarray, top: int, left: int, side: int) -> np.ndarray:
    c, h, w = image.shape
    out = np.zeros((c, side, side), dtype=image.dtype)
    r0, r1 = max(top, 0), min(top + side, h)
    c0, c1 = max(left, 0), min(left + side, w)
    if r0 < r1 and c0 < c1:
        out[:, r0 - top : r1 - top, c0 - left : c1 - left] = image[:, r0:r1, c0:c1]
    return out


def crop_regions(image: np.ndarray, masks: Sequence[np.ndarray], out_size: int) -> list[np.ndarray]:
    """Square crops around each mask's bounding box, bilinearly resized to ``out_size``.

    Empty masks are skipped with a warning; if every mask is empty a
    ValidationError is raised.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ValidationError(f"image must be CxHxW, got shape {image.shape}")
    if out_size < 1:
        raise ValidationError("out_size must be >= 1")
    crops = []
    for i, m in enumerate(masks):
        m = np.asarray(m, dtype=bool)
        if m.shape != image.shape[1:]:
            raise ValidationError(f"mask {i} has shape {m.shape}, image is {image.shape[1:]}")
        box = square_box(m)
        if box is None:
            log.warning("crop_regions skipped empty mask index=%d", i)
            continue
        sq = crop_square(image, *box)
        if sq.shape[1] != out_size:
            sq = resize(sq, (image.shape[0], out_size, out_size), order=1, mode="edge", anti_aliasing=False)
        crops.append(sq)
    if not crops:
        raise ValidationError("every mask is empty")
    return crops


@dataclass
class TextureEncoderWeights:
    """3x3 conv from image+Plucker (9 channels) to o channels, and a 3x3 o->1 gate conv."""

    conv_w: np.ndarray  # (o, 9, 3, 3)
    conv_b: np.ndarray  # (o,)
    gate_w: np.ndarray  # (1, o, 3, 3)
    gate_b: np.ndarray  # (1,)

    def __post_init__(self) -> None:
        self.conv_w = np.asarray(self.conv_w, dtype=np.float64)
        o = self.conv_w.shape[0]
        shapes = {
            "conv_w": (o, 9, 3, 3),
            "conv_b": (o,),
            "gate_w": (1, o, 3, 3),
            "gate_b": (1,),
        }
        for name, shape in shapes.items():
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.shape != shape:
                raise ValidationError(f"texture encoder {name}: expected {shape}, got {a.shape}")
            if not np.isfinite(a).all():
                raise ValidationError(f"texture encoder {name}: non-finite weights")
            setattr(self, name, a)

    @property
    def out_channels(self) -> int:
        return self.conv_w.shape[0]


def init_texture_encoder(out_channels: int = 16, seed: int = 0) -> TextureEncoderWeights:
    rng = np.random.default_rng(seed)
    return TextureEncoderWeights(
        rng.normal(0, 1 / np.sqrt(81), (out_channels, 9, 3, 3)),
        np.zeros(out_channels),
        rng.normal(0, 1 / np.sqrt(9 * out_channels), (1, out_channels, 3, 3)),
        np.zeros(1),
    )


def texture_features(image: np.ndarray, plucker: np.ndarray, weights: TextureEncoderWeights) -> np.ndarray:
    """The pre-gate convolution over the image/Plucker concatenation."""
    image = np.asarray(image, dtype=np.float64)
    plucker = np.asarray(plucker, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValidationError(f"image must be 3xHxW, got {image.shape}")
    if plucker.shape != (6,) + image.shape[1:]:
        raise ValidationError(f"plucker must be 6x{image.shape[1]}x{image.shape[2]}, got {plucker.shape}")
    return conv2d(np.concatenate([image, plucker]), weights.conv_w, weights.conv_b)


def texture_encode(image: np.ndarray, plucker: np.ndarray, weights: TextureEncoderWeights) -> np.ndarray:
    """F_c = conv(image ++ plucker) * sigmoid(gate_conv(conv(...))), shape (o, H, W)."""
    f = texture_features(image, plucker, weights)
    gate = sigmoid(conv2d(f, weights.gate_w, weights.gate_b))
    return f * gate
