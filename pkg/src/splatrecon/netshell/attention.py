"""Scaled dot-product attention and the RSEM token block."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..ops import relu
from ..splatcore import ValidationError


def _check(name: str, a: np.ndarray, shape: tuple) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.shape != shape:
        raise ValidationError(f"{name}: expected shape {shape}, got {a.shape}")
    if not np.isfinite(a).all():
        raise ValidationError(f"{name}: non-finite weights")
    return a


@dataclass
class AttnWeights:
    """Projections of one attention layer: model width d to head width d_k and back."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    def __post_init__(self) -> None:
        d, dk = np.shape(self.wq)
        self.wq = _check("wq", self.wq, (d, dk))
        self.wk = _check("wk", self.wk, (d, dk))
        self.wv = _check("wv", self.wv, (d, dk))
        self.wo = _check("wo", self.wo, (dk, d))

    @property
    def d(self) -> int:
        return self.wq.shape[0]

    @classmethod
    def identity(cls, d: int) -> "AttnWeights":
        eye = np.eye(d)
        return cls(eye, eye, eye, eye)

    @classmethod
    def zeros(cls, d: int) -> "AttnWeights":
        z = np.zeros((d, d))
        return cls(z, z, z, z)


@dataclass
class MLPWeights:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self) -> None:
        d, hid = np.shape(self.w1)
        self.w1 = _check("mlp.w1", self.w1, (d, hid))
        self.b1 = _check("mlp.b1", self.b1, (hid,))
        self.w2 = _check("mlp.w2", self.w2, (hid, d))
        self.b2 = _check("mlp.b2", self.b2, (d,))

    @classmethod
    def zeros(cls, d: int, hidden: int) -> "MLPWeights":
        return cls(np.zeros((d, hidden)), np.zeros(hidden), np.zeros((hidden, d)), np.zeros(d))


@dataclass
class RSEMLayer:
    self_attn: AttnWeights
    cross_attn: AttnWeights
    mlp: MLPWeights


@dataclass
class AttnBlockWeights:
    """Stack of RSEM layers of width d. ``residual`` adds each sub-block's input to its output."""

    layers: list = field(default_factory=list)
    residual: bool = True

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValidationError("attention block needs at least one layer")
        d = self.d
        for i, layer in enumerate(self.layers):
            for part in (layer.self_attn, layer.cross_attn):
                if part.d != d:
                    raise ValidationError(f"layer {i}: attention width {part.d} != {d}")
            if layer.mlp.w1.shape[0] != d:
                raise ValidationError(f"layer {i}: mlp width {layer.mlp.w1.shape[0]} != {d}")

    @property
    def d(self) -> int:
        return self.layers[0].self_attn.d

    @property
    def n_layers(self) -> int:
        return len(self.layers)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, weights: AttnWeights, return_scores: bool = False
):
    """softmax((Q Wq)(K Wk)^T / sqrt(d_k)) (V Wv) Wo for token matrices (n, d)."""
    q, k, v = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (q, k, v))
    d = weights.d
    for name, a in (("Q", q), ("K", k), ("V", v)):
        if a.shape[1] != d:
            raise ValidationError(f"{name} width {a.shape[1]} does not match weights width {d}")
    if k.shape[0] != v.shape[0]:
        raise ValidationError(f"K has {k.shape[0]} rows but V has {v.shape[0]}")
    if k.shape[0] == 0:
        raise ValidationError("attention needs at least one key")
    dk = weights.wq.shape[1]
    scores = softmax((q @ weights.wq) @ (k @ weights.wk).T / np.sqrt(dk))
    out = (scores @ (v @ weights.wv)) @ weights.wo
    return (out, scores) if return_scores else out


def mlp(x: np.ndarray, w: MLPWeights) -> np.ndarray:
    return relu(x @ w.w1 + w.b1) @ w.w2 + w.b2


def rsem_block(head_feat: np.ndarray, body_feats: np.ndarray, weights: AttnBlockWeights) -> np.ndarray:
    """Self-attention over the head query, cross-attention into body tokens, then the MLP."""
    q = np.atleast_2d(np.asarray(head_feat, dtype=np.float64))
    body = np.atleast_2d(np.asarray(body_feats, dtype=np.float64))
    res = 1.0 if weights.residual else 0.0
    for layer in weights.layers:
        q = res * q + attention(q, q, q, layer.self_attn)
        q = res * q + attention(q, body, body, layer.cross_attn)
        q = res * q + mlp(q, layer.mlp)
    return q


def init_attn_block(d: int = 64, hidden: Optional[int] = None, n_layers: int = 1, seed: int = 0, residual: bool = True) -> AttnBlockWeights:
    rng = np.random.default_rng(seed)
    hidden = hidden or 2 * d

    def mat(a, b):
        return rng.normal(0.0, 1.0 / np.sqrt(a), (a, b))

    layers = []
    for _ in range(n_layers):
        layers.append(
            RSEMLayer(
                AttnWeights(mat(d, d), mat(d, d), mat(d, d), mat(d, d)),
                AttnWeights(mat(d, d), mat(d, d), mat(d, d), mat(d, d)),
                MLPWeights(mat(d, hidden), np.zeros(hidden), mat(hidden, d), np.zeros(d)),
            )
        )
    return AttnBlockWeights(layers, residual)
