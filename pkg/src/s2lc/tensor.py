"""Dense-tensor kernels: convolutions, normalization, attention math, sampling.

All feature maps are numpy arrays in (batch, channels, height, width) layout,
stored as float32. Arithmetic inside convolutions and reductions runs in
float64 and results are rounded back to float32, so identical inputs produce
bit-identical outputs across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ShapeError

__all__ = [
    "ConvSpec",
    "conv2d",
    "activation",
    "layer_norm",
    "softmax",
    "global_avg_pool",
    "bilinear_sample",
]


@dataclass(frozen=True)
class ConvSpec:
    """Static shape contract of a 2-d convolution.

    ``groups == 1`` is a dense convolution, ``groups == in_channels`` is
    depth-wise.  ``transposed`` selects the upsampling form; its output size
    is exactly ``stride * H`` for odd kernels with ``padding == (k - 1) // 2``
    (an implicit output padding of ``stride - 1`` is applied).
    """

    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    groups: int = 1
    transposed: bool = False

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ShapeError(f"conv kernel must be positive, got {self.kernel_h}x{self.kernel_w}")
        if self.stride < 1:
            raise ShapeError(f"conv stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ShapeError(f"conv padding must be non-negative, got {self.padding}")
        if self.groups < 1:
            raise ShapeError(f"conv groups must be positive, got {self.groups}")


def _require_4d(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-d (batch, channels, height, width), got {x.ndim}-d")
    return x


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Cross-correlate ``x`` with ``weight`` (or transposed-convolve).

    Weight layout is ``(out_ch, in_ch // groups, kh, kw)`` for the forward
    form and ``(in_ch, out_ch // groups, kh, kw)`` for the transposed form.
    Output spatial size is ``floor((H + 2*pad - k) / stride) + 1`` forward and
    ``stride * H`` transposed (odd kernel, pad = (k-1)//2 convention).
    """
    x = _require_4d(x, "input")
    weight = np.asarray(weight)
    bias = np.asarray(bias)
    if weight.ndim != 4:
        raise ShapeError(f"weight must be 4-d, got {weight.ndim}-d")
    if weight.shape[2] != spec.kernel_h or weight.shape[3] != spec.kernel_w:
        raise ShapeError(
            f"weight kernel {weight.shape[2]}x{weight.shape[3]} does not match "
            f"spec {spec.kernel_h}x{spec.kernel_w} (axes 2, 3)"
        )
    if spec.transposed:
        return _conv2d_transposed(x, weight, bias, spec)
    return _conv2d_forward(x, weight, bias, spec)


def _conv2d_forward(x, weight, bias, spec):
    b, c_in, h, w = x.shape
    c_out, c_per_group = weight.shape[0], weight.shape[1]
    g = spec.groups
    if c_in % g != 0 or c_out % g != 0:
        raise ShapeError(f"groups={g} must divide in={c_in} and out={c_out} channels (axis 1)")
    if c_per_group != c_in // g:
        raise ShapeError(
            f"weight expects {c_per_group} channels per group, input provides {c_in // g} (axis 1)"
        )
    if bias.shape != (c_out,):
        raise ShapeError(f"bias length {bias.shape} must equal out channels ({c_out},) (axis 0)")

    kh, kw, s, p = spec.kernel_h, spec.kernel_w, spec.stride, spec.padding
    if h + 2 * p < kh or w + 2 * p < kw:
        raise ShapeError(f"spatial extent {h}x{w} too small for kernel {kh}x{kw} with pad {p}")

    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (p, p), (p, p)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::s, ::s]  # (b, c_in, oh, ow, kh, kw)
    oh, ow = windows.shape[2], windows.shape[3]
    windows = windows.reshape(b, g, c_in // g, oh, ow, kh, kw)
    wg = weight.astype(np.float64).reshape(g, c_out // g, c_in // g, kh, kw)
    out = np.einsum("bgchwij,gocij->bgohw", windows, wg, optimize=True)
    out = out.reshape(b, c_out, oh, ow) + bias.astype(np.float64)[None, :, None, None]
    return out.astype(np.float32)


def _conv2d_transposed(x, weight, bias, spec):
    b, c_in, h, w = x.shape
    g = spec.groups
    if weight.shape[0] != c_in:
        raise ShapeError(
            f"transposed weight expects {weight.shape[0]} input channels, got {c_in} (axis 1)"
        )
    c_out = weight.shape[1] * g
    if c_in % g != 0:
        raise ShapeError(f"groups={g} must divide in={c_in} channels (axis 1)")
    if bias.shape != (c_out,):
        raise ShapeError(f"bias length {bias.shape} must equal out channels ({c_out},) (axis 0)")

    kh, kw, s, p = spec.kernel_h, spec.kernel_w, spec.stride, spec.padding
    # Transposed conv == forward conv over a zero-dilated input with the
    # spatially flipped kernel; implicit output padding of stride-1.
    hd, wd = (h - 1) * s + 1 + (s - 1), (w - 1) * s + 1 + (s - 1)
    dil = np.zeros((b, c_in, hd, wd), dtype=np.float64)
    dil[:, :, :: s or 1, :: s or 1][:, :, :h, :w] = x.astype(np.float64)
    wf = weight.astype(np.float64)[:, :, ::-1, ::-1]  # flip spatially
    wf = wf.reshape(g, c_in // g, c_out // g, kh, kw)
    # forward conv: input group layout matches, output = sum over group input chans
    pe = kh - 1 - p
    if pe < 0 or (kw - 1 - p) < 0:
        raise ShapeError(f"padding {p} exceeds kernel-1 for transposed conv {kh}x{kw}")
    xp = np.pad(dil, ((0, 0), (0, 0), (pe, pe), (kw - 1 - p, kw - 1 - p)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    oh, ow = windows.shape[2], windows.shape[3]
    windows = windows.reshape(b, g, c_in // g, oh, ow, kh, kw)
    out = np.einsum("bgchwij,gcoij->bgohw", windows, wf, optimize=True)
    out = out.reshape(b, c_out, oh, ow) + bias.astype(np.float64)[None, :, None, None]
    return out.astype(np.float32)


def activation(x: np.ndarray, kind: str, slope: float = 0.01) -> np.ndarray:
    """Apply an elementwise nonlinearity: gelu, leaky_relu, sigmoid, or tanh.

    GELU uses the exact erf form ``x * Phi(x)``, not the tanh approximation.
    """
    x64 = np.asarray(x, dtype=np.float64)
    if kind == "gelu":
        out = 0.5 * x64 * (1.0 + special.erf(x64 / np.sqrt(2.0)))
    elif kind == "leaky_relu":
        out = np.where(x64 >= 0, x64, slope * x64)
    elif kind == "sigmoid":
        e = np.exp(-np.abs(x64))
        out = np.where(x64 >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    elif kind == "tanh":
        out = np.tanh(x64)
    else:
        raise ValueError(f"unknown activation kind {kind!r}")
    return out.astype(np.float32)


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x64 = np.asarray(x, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if x64.shape[-1] != gamma.shape[0] or gamma.shape != beta.shape:
        raise ShapeError(
            f"layer_norm feature width {x64.shape[-1]} must match gamma/beta "
            f"{gamma.shape}/{beta.shape} (last axis)"
        )
    mean = x64.mean(axis=-1, keepdims=True)
    var = x64.var(axis=-1, keepdims=True)
    out = (x64 - mean) / np.sqrt(var + eps) * gamma + beta
    return out.astype(np.float32)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax along ``axis``; rows sum to 1."""
    x64 = np.asarray(x, dtype=np.float64)
    shifted = x64 - x64.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return out.astype(np.float32)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Spatial mean per channel, output shape (B, C, 1, 1)."""
    x = _require_4d(x, "input")
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeError(f"global_avg_pool needs non-empty spatial extent, got {x.shape} (axes 2, 3)")
    out = x.astype(np.float64).mean(axis=(2, 3), keepdims=True)
    return out.astype(np.float32)


def bilinear_sample(feature: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Sample ``feature`` at normalized (x, y) points with bilinear weights.

    Points use the align-corners convention: x = -1 maps to column 0 and
    x = +1 to column W-1.  Out-of-range points clamp to the border.  Input
    points shape (B, P, 2); output shape (B, C, P).
    """
    feature = _require_4d(feature, "feature")
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 3 or points.shape[-1] != 2 or points.shape[0] != feature.shape[0]:
        raise ShapeError(
            f"points must be (batch, n, 2) with batch={feature.shape[0]}, got {points.shape}"
        )
    b, c, h, w = feature.shape
    gx = (points[..., 0] + 1.0) * (w - 1) / 2.0
    gy = (points[..., 1] + 1.0) * (h - 1) / 2.0
    gx = np.clip(gx, 0.0, w - 1)
    gy = np.clip(gy, 0.0, h - 1)
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = gx - x0
    fy = gy - y0

    flat = feature.astype(np.float64).reshape(b, c, h * w)

    def gather(yy, xx):
        idx = (yy * w + xx)[:, None, :]  # (b, 1, p)
        return np.take_along_axis(flat, np.broadcast_to(idx, (b, c, idx.shape[2])), axis=2)

    wx0, wx1 = (1.0 - fx)[:, None, :], fx[:, None, :]
    wy0, wy1 = (1.0 - fy)[:, None, :], fy[:, None, :]
    out = (
        gather(y0, x0) * wy0 * wx0
        + gather(y0, x1) * wy0 * wx1
        + gather(y1, x0) * wy1 * wx0
        + gather(y1, x1) * wy1 * wx1
    )
    return out.astype(np.float32)
