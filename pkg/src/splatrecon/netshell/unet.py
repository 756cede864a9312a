"""Dual-branch U-Net with cross-branch additive fusion.

Each branch: stem conv, five down blocks (conv + ReLU, keep skip, 2x average
pool), a mid block, and five up blocks (2x nearest upsample, concatenate the
matching skip, conv + ReLU). Up block 5 ends with a 1x1 projection to the
14 Gaussian channels. The branches are summed after the mid block and after
up blocks 1-4, and the sum feeds both branches' next block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..ops import avgpool2, conv2d, relu, upsample2
from ..splatcore import ValidationError

N_LEVELS = 5
OUT_CHANNELS = 14


@dataclass
class Conv:
    w: np.ndarray  # (O, C, k, k)
    b: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 4:
            raise ValidationError(f"conv weight must be rank 4, got shape {self.w.shape}")
        if not np.isfinite(self.w).all():
            raise ValidationError("non-finite conv weights")
        if self.b is not None:
            self.b = np.asarray(self.b, dtype=np.float64)
            if self.b.shape != (self.w.shape[0],):
                raise ValidationError(f"conv bias shape {self.b.shape} != ({self.w.shape[0]},)")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return conv2d(x, self.w, self.b)

    @property
    def in_channels(self) -> int:
        return self.w.shape[1]

    @property
    def out_channels(self) -> int:
        return self.w.shape[0]


@dataclass
class BranchWeights:
    """One U-Net branch. ``down``/``up`` hold five convs each; ``head`` is the final 1x1."""

    stem: Conv
    down: list = field(default_factory=list)
    mid: Conv = None
    up: list = field(default_factory=list)
    head: Conv = None

    def __post_init__(self) -> None:
        if len(self.down) != N_LEVELS or len(self.up) != N_LEVELS:
            raise ValidationError(f"a branch needs {N_LEVELS} down and {N_LEVELS} up blocks")
        c = self.stem.out_channels
        skips = []
        for k, conv in enumerate(self.down):
            if conv.in_channels != c:
                raise ValidationError(f"down block {k + 1}: expects {conv.in_channels} channels, gets {c}")
            c = conv.out_channels
            skips.append(c)
        if self.mid.in_channels != c:
            raise ValidationError(f"mid block: expects {self.mid.in_channels} channels, gets {c}")
        c = self.mid.out_channels
        for k, conv in enumerate(self.up):
            want = c + skips[N_LEVELS - 1 - k]
            if conv.in_channels != want:
                raise ValidationError(f"up block {k + 1}: expects {conv.in_channels} channels, gets {want}")
            c = conv.out_channels
        if self.head.in_channels != c or self.head.out_channels != OUT_CHANNELS:
            raise ValidationError(f"head must map {c} -> {OUT_CHANNELS} channels")

    @property
    def in_channels(self) -> int:
        return self.stem.in_channels

    def convs(self) -> dict:
        out = {"stem": self.stem, "mid": self.mid, "head": self.head}
        out.update({f"down{k + 1}": c for k, c in enumerate(self.down)})
        out.update({f"up{k + 1}": c for k, c in enumerate(self.up)})
        return out

    def shape_signature(self) -> dict:
        return {name: c.w.shape for name, c in self.convs().items()}

    def scaled(self, factor: float) -> "BranchWeights":
        def sc(c: Conv) -> Conv:
            return Conv(c.w * factor, None if c.b is None else c.b * factor)

        return BranchWeights(sc(self.stem), [sc(c) for c in self.down], sc(self.mid), [sc(c) for c in self.up], sc(self.head))


@dataclass
class DualUNetWeights:
    texture: BranchWeights
    normal: BranchWeights

    def __post_init__(self) -> None:
        if self.texture.shape_signature() != self.normal.shape_signature():
            raise ValidationError("texture and normal branches must share layer shapes")


def branch_widths(base: int = 32) -> list[int]:
    """Channel width after the stem and after each down block."""
    return [base * min(2**k, 4) for k in range(N_LEVELS + 1)]


def init_branch(in_channels: int, base: int = 32, seed: int = 0, bias: bool = True) -> BranchWeights:
    rng = np.random.default_rng(seed)
    widths = branch_widths(base)

    def conv(o: int, c: int, k: int = 3) -> Conv:
        w = rng.normal(0.0, np.sqrt(2.0 / (c * k * k)), (o, c, k, k))
        return Conv(w, np.zeros(o) if bias else None)

    stem = conv(widths[0], in_channels)
    down = [conv(widths[k + 1], widths[k]) for k in range(N_LEVELS)]
    mid = conv(widths[N_LEVELS], widths[N_LEVELS])
    up = []
    c = widths[N_LEVELS]
    for k in range(N_LEVELS):
        skip = widths[N_LEVELS - k]
        out = widths[N_LEVELS - 1 - k]
        up.append(conv(out, c + skip))
        c = out
    head = conv(OUT_CHANNELS, c, k=1)
    return BranchWeights(stem, down, mid, up, head)


def init_dual_unet(in_channels: int, base: int = 32, seed: int = 0, bias: bool = True) -> DualUNetWeights:
    return DualUNetWeights(
        init_branch(in_channels, base, seed, bias),
        init_branch(in_channels, base, seed + 1, bias),
    )


def _encode(x: np.ndarray, w: BranchWeights) -> tuple[np.ndarray, list]:
    h = w.stem(x)
    skips = []
    for conv in w.down:
        h = relu(conv(h))
        skips.append(h)
        h = avgpool2(h)
    return relu(w.mid(h)), skips


def _up(k: int, h: np.ndarray, skips: list, w: BranchWeights) -> np.ndarray:
    h = upsample2(h)
    return relu(w.up[k](np.concatenate([h, skips[N_LEVELS - 1 - k]])))


def _check_input(x: np.ndarray) -> None:
    _, hh, ww = x.shape
    f = 2**N_LEVELS
    if hh % f or ww % f:
        raise ValidationError(f"spatial size {hh}x{ww} must be divisible by {f}")


def unet_input(geo: np.ndarray, tex: np.ndarray) -> np.ndarray:
    """Channel concatenation of geometry features (C,H,W or V,C,H,W) and texture features (C,H,W)."""
    geo = np.asarray(geo, dtype=np.float64)
    tex = np.asarray(tex, dtype=np.float64)
    if geo.ndim == 4:
        geo = geo.reshape(-1, *geo.shape[2:])
    if geo.ndim != 3 or tex.ndim != 3:
        raise ValidationError("feature maps must be CxHxW (geometry may be VxCxHxW)")
    if geo.shape[1:] != tex.shape[1:]:
        raise ValidationError(f"geometry {geo.shape[1:]} and texture {tex.shape[1:]} maps are not aligned")
    return np.concatenate([geo, tex])


def single_branch_forward(x: np.ndarray, w: BranchWeights) -> np.ndarray:
    """Plain U-Net pass of one branch (no fusion)."""
    _check_input(x)
    h, skips = _encode(x, w)
    for k in range(N_LEVELS):
        h = _up(k, h, skips, w)
    return w.head(h)


def _fuse(a: np.ndarray, b: np.ndarray, stage: str) -> np.ndarray:
    if a.shape != b.shape:
        raise ValidationError(f"fusion at {stage}: shapes {a.shape} and {b.shape} differ")
    return a + b


def dual_unet_forward(
    geo: np.ndarray,
    tex: np.ndarray,
    weights: DualUNetWeights,
    trace: Optional[Callable[[str, np.ndarray, np.ndarray, np.ndarray], None]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Return (texture map, normal map), each 14xHxW.

    ``trace(stage, texture_pre, normal_pre, fused)`` is called at every fusion point.
    """
    x = unet_input(geo, tex)
    if x.shape[0] != weights.texture.in_channels:
        raise ValidationError(f"inputs have {x.shape[0]} channels, weights expect {weights.texture.in_channels}")
    _check_input(x)
    hc, skips_c = _encode(x, weights.texture)
    hn, skips_n = _encode(x, weights.normal)
    fused = _fuse(hc, hn, "mid")
    if trace:
        trace("mid", hc, hn, fused)
    for k in range(N_LEVELS):
        hc = _up(k, fused, skips_c, weights.texture)
        hn = _up(k, fused, skips_n, weights.normal)
        if k < N_LEVELS - 1:
            fused = _fuse(hc, hn, f"up{k + 1}")
            if trace:
                trace(f"up{k + 1}", hc, hn, fused)
    return weights.texture.head(hc), weights.normal.head(hn)
