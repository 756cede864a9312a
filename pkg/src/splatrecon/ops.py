"""Small dense-array kernels shared by the encoder and network skeletons."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_IM2COL_BUDGET = 1 << 23


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Stride-1, same-padding 2D cross-correlation.

    x: (C, H, W); weight: (O, C, k, k) with odd k; bias: (O,). Returns (O, H, W).
    Uses im2col over bands of rows so the column buffer stays under
    ``_IM2COL_BUDGET`` elements at any resolution.
    """
    c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"conv2d: weight expects {ci} input channels, got {c}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("conv2d: kernel size must be odd")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(np.asarray(x, dtype=np.float64), ((0, 0), (ph, ph), (pw, pw)))
    wmat = np.ascontiguousarray(np.asarray(weight, dtype=np.float64).reshape(o, c * kh * kw))
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (C, H, W, kh, kw)
    band = max(1, _IM2COL_BUDGET // (c * kh * kw * w))
    out = np.empty((o, h, w))
    for r0 in range(0, h, band):
        r1 = min(r0 + band, h)
        cols = windows[:, r0:r1].transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, -1)
        out[:, r0:r1] = (wmat @ cols).reshape(o, r1 - r0, w)
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[:, None, None]
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def softplus(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def avgpool2(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avgpool2 needs even spatial dims, got {h}x{w}")
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def upsample2(x: np.ndarray) -> np.ndarray:
    return x.repeat(2, axis=1).repeat(2, axis=2)
