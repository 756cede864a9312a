"""NSW1 flat weight manifests and conversion to the typed weight bundles.

Layout (little-endian): magic ``NSW1``, uint32 entry count, then per entry a
uint32 name length, the UTF-8 name, uint32 rank, rank uint32 dims, and the
float32 values in C order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..splatcore import FormatError, ValidationError
from .attention import AttnBlockWeights, AttnWeights, MLPWeights, RSEMLayer
from .encoders import TextureEncoderWeights
from .unet import N_LEVELS, BranchWeights, Conv, DualUNetWeights

MAGIC = b"NSW1"


def save_weights(path: Union[str, Path], tensors: dict) -> None:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        parts.append(a.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_weights(path: Union[str, Path]) -> dict:
    """Read a manifest into an insertion-ordered dict of float64 arrays."""
    data = Path(path).read_bytes()
    name = Path(path).name
    if data[:4] != MAGIC:
        raise FormatError(f"{name}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    pos = 4

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{name}: truncated while reading {what} at byte {pos}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4, "entry count"))
    out = {}
    for i in range(count):
        (n,) = struct.unpack("<I", take(4, f"entry {i} name length"))
        key = take(n, f"entry {i} name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, f"{key} rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"{key} dims"))
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(4 * size, f"{key} data"), dtype="<f4").reshape(dims)
        if key in out:
            raise FormatError(f"{name}: duplicate entry {key!r}")
        out[key] = arr.astype(np.float64)
    if pos != len(data):
        raise FormatError(f"{name}: {len(data) - pos} trailing bytes after {count} entries")
    return out


def _need(t: dict, key: str) -> np.ndarray:
    if key not in t:
        raise ValidationError(f"weights are missing {key!r}")
    return t[key]


# -- typed bundles <-> flat dicts --------------------------------------------------------


def branch_to_dict(prefix: str, w: BranchWeights) -> dict:
    out = {}
    for name, conv in w.convs().items():
        out[f"{prefix}.{name}.w"] = conv.w
        if conv.b is not None:
            out[f"{prefix}.{name}.b"] = conv.b
    return out


def branch_from_dict(prefix: str, t: dict) -> BranchWeights:
    def conv(name: str) -> Conv:
        return Conv(_need(t, f"{prefix}.{name}.w"), t.get(f"{prefix}.{name}.b"))

    return BranchWeights(
        conv("stem"),
        [conv(f"down{k + 1}") for k in range(N_LEVELS)],
        conv("mid"),
        [conv(f"up{k + 1}") for k in range(N_LEVELS)],
        conv("head"),
    )


def unet_to_dict(w: DualUNetWeights) -> dict:
    return {**branch_to_dict("unet.texture", w.texture), **branch_to_dict("unet.normal", w.normal)}


def unet_from_dict(t: dict) -> DualUNetWeights:
    return DualUNetWeights(branch_from_dict("unet.texture", t), branch_from_dict("unet.normal", t))


def texture_encoder_to_dict(w: TextureEncoderWeights) -> dict:
    return {"texenc.conv.w": w.conv_w, "texenc.conv.b": w.conv_b, "texenc.gate.w": w.gate_w, "texenc.gate.b": w.gate_b}


def texture_encoder_from_dict(t: dict) -> TextureEncoderWeights:
    return TextureEncoderWeights(
        _need(t, "texenc.conv.w"), _need(t, "texenc.conv.b"), _need(t, "texenc.gate.w"), _need(t, "texenc.gate.b")
    )


def attn_block_to_dict(w: AttnBlockWeights) -> dict:
    out = {"rsem.residual": np.array([1.0 if w.residual else 0.0])}
    for i, layer in enumerate(w.layers):
        for part, a in (("sattn", layer.self_attn), ("cattn", layer.cross_attn)):
            for m in ("wq", "wk", "wv", "wo"):
                out[f"rsem.{i}.{part}.{m}"] = getattr(a, m)
        for m in ("w1", "b1", "w2", "b2"):
            out[f"rsem.{i}.mlp.{m}"] = getattr(layer.mlp, m)
    return out


def attn_block_from_dict(t: dict) -> AttnBlockWeights:
    layers = []
    i = 0
    while f"rsem.{i}.sattn.wq" in t:
        att = [
            AttnWeights(*(_need(t, f"rsem.{i}.{part}.{m}") for m in ("wq", "wk", "wv", "wo")))
            for part in ("sattn", "cattn")
        ]
        layers.append(RSEMLayer(att[0], att[1], MLPWeights(*(_need(t, f"rsem.{i}.mlp.{m}") for m in ("w1", "b1", "w2", "b2")))))
        i += 1
    residual = bool(t.get("rsem.residual", np.array([1.0]))[0])
    return AttnBlockWeights(layers, residual)


@dataclass
class NetshellWeights:
    """Everything `netshell run` needs: geometry encoder conv, texture encoder, dual U-Net."""

    geo_w: np.ndarray  # (o, C, 3, 3) shared across views
    geo_b: np.ndarray
    texture_encoder: TextureEncoderWeights
    unet: DualUNetWeights
    rsem: Optional[AttnBlockWeights] = None

    def to_dict(self) -> dict:
        out = {"geo.w": self.geo_w, "geo.b": self.geo_b}
        out.update(texture_encoder_to_dict(self.texture_encoder))
        out.update(unet_to_dict(self.unet))
        if self.rsem is not None:
            out.update(attn_block_to_dict(self.rsem))
        return out

    @classmethod
    def from_dict(cls, t: dict) -> "NetshellWeights":
        rsem = attn_block_from_dict(t) if "rsem.0.sattn.wq" in t else None
        return cls(_need(t, "geo.w"), _need(t, "geo.b"), texture_encoder_from_dict(t), unet_from_dict(t), rsem)

    def save(self, path: Union[str, Path]) -> None:
        save_weights(path, self.to_dict())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "NetshellWeights":
        return cls.from_dict(load_weights(path))


def init_netshell_weights(
    fourier_order: int = 4, geo_channels: int = 8, tex_channels: int = 8, base: int = 32, seed: int = 0, attn_width: int = 64
) -> NetshellWeights:
    """Seeded random weights with consistent widths (values rounded to float32 like a saved manifest)."""
    from ..fourier import init_encoder_weights
    from .attention import init_attn_block
    from .encoders import init_texture_encoder
    from .unet import init_dual_unet

    gw, gb = init_encoder_weights(fourier_order, geo_channels, seed)
    w = NetshellWeights(
        gw,
        gb,
        init_texture_encoder(tex_channels, seed + 1),
        init_dual_unet(3 * geo_channels + tex_channels, base, seed + 2),
        init_attn_block(attn_width, seed=seed + 4),
    )
    return NetshellWeights.from_dict({k: np.asarray(v, dtype=np.float32).astype(np.float64) for k, v in w.to_dict().items()})
