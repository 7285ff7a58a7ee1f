"""Dense, convolution, pooling, and RoIAlign layers over the autodiff tensor.

Convolutions run as im2col gathers followed by a single matmul, so every
layer reduces to the primitive ops the finite-difference suite verifies.
Feature maps are (H, W, C); token sequences are (T, C).
"""

from __future__ import annotations

import math

import numpy as np

from ..geometry import Rect2D
from .tensor import Tensor, concat

__all__ = [
    "Dense",
    "MLP",
    "Conv2D",
    "Conv1D",
    "avg_pool2d",
    "roi_align",
    "roi_align_matrix",
]


def _param(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    t = Tensor(rng.normal(0.0, 1.0 / math.sqrt(max(fan_in, 1)), size=shape))
    t.requires_grad = True
    return t


class Dense:
    """Affine map y = x W + b over (n, in_width) inputs."""

    def __init__(self, in_width: int, out_width: int, rng: np.random.Generator):
        self.weight = _param(rng, (in_width, out_width), in_width)
        self.bias = Tensor(np.zeros(out_width))
        self.bias.requires_grad = True

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def parameters(self) -> list:
        return [self.weight, self.bias]


class MLP:
    """Stack of Dense layers with ReLU between (and optionally after) them."""

    def __init__(
        self,
        widths: list,
        rng: np.random.Generator,
        final_relu: bool = True,
    ):
        if len(widths) < 2:
            raise ValueError("MLP needs at least input and output widths")
        self.layers = [
            Dense(a, b, rng) for a, b in zip(widths[:-1], widths[1:])
        ]
        self.final_relu = final_relu

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_relu:
                x = x.relu()
        return x

    def parameters(self) -> list:
        return [p for layer in self.layers for p in layer.parameters()]


def _im2col_indices(
    h: int, w: int, kernel: int, stride: int, pad: tuple
) -> tuple:
    """Flat gather indices into the padded (H+p, W+p) grid, plus output shape."""
    ph = h + pad[0] + pad[1]
    pw = w + pad[2] + pad[3]
    out_h = (ph - kernel) // stride + 1
    out_w = (pw - kernel) // stride + 1
    if out_h <= 0 or out_w <= 0:
        raise ValueError("kernel larger than padded input")
    r0 = np.arange(out_h) * stride
    c0 = np.arange(out_w) * stride
    kr = np.arange(kernel)
    rows = (r0[:, None, None, None] + kr[None, None, :, None])
    cols = (c0[None, :, None, None] + kr[None, None, None, :])
    flat = (rows * pw + cols).reshape(out_h * out_w * kernel * kernel)
    return flat, out_h, out_w, ph, pw


class Conv2D:
    """k x k convolution via im2col; padding='same' keeps H, W at stride 1."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int = 3,
        stride: int = 1,
        padding: str = "same",
        rng: np.random.Generator | None = None,
    ):
        rng = np.random.default_rng(0) if rng is None else rng
        self.kernel = int(kernel)
        self.stride = int(stride)
        self.in_channels = int(in_channels)
        if padding == "same":
            total = self.kernel - 1
            self.pad = (total // 2, total - total // 2)
        elif padding == "valid":
            self.pad = (0, 0)
        else:
            raise ValueError(f"unknown padding {padding!r}")
        fan_in = self.kernel * self.kernel * in_channels
        self.weight = _param(rng, (fan_in, out_channels), fan_in)
        self.bias = Tensor(np.zeros(out_channels))
        self.bias.requires_grad = True

    def __call__(self, x: Tensor) -> Tensor:
        h, w, c = x.shape
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {c}")
        pad4 = (self.pad[0], self.pad[1], self.pad[0], self.pad[1])
        flat_idx, out_h, out_w, ph, pw = _im2col_indices(
            h, w, self.kernel, self.stride, pad4
        )
        padded = x.pad2d((self.pad[0], self.pad[1]), (self.pad[0], self.pad[1]))
        cols = padded.reshape(ph * pw, c).gather_rows(flat_idx)
        cols = cols.reshape(out_h * out_w, self.kernel * self.kernel * c)
        out = cols @ self.weight + self.bias
        return out.reshape(out_h, out_w, self.weight.shape[1])

    def parameters(self) -> list:
        return [self.weight, self.bias]


class Conv1D:
    """1D convolution over (T, C) token sequences, same-length output."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int = 4,
        rng: np.random.Generator | None = None,
    ):
        rng = np.random.default_rng(0) if rng is None else rng
        self.kernel = int(kernel)
        self.in_channels = int(in_channels)
        total = self.kernel - 1
        self.pad = (total // 2, total - total // 2)
        fan_in = self.kernel * in_channels
        self.weight = _param(rng, (fan_in, out_channels), fan_in)
        self.bias = Tensor(np.zeros(out_channels))
        self.bias.requires_grad = True

    def __call__(self, x: Tensor) -> Tensor:
        t, c = x.shape
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {c}")
        padded = x.pad2d(self.pad, (0, 0))
        starts = np.arange(t)
        idx = (starts[:, None] + np.arange(self.kernel)[None, :]).reshape(-1)
        cols = padded.gather_rows(idx).reshape(t, self.kernel * c)
        return cols @ self.weight + self.bias

    def parameters(self) -> list:
        return [self.weight, self.bias]


def avg_pool2d(x: Tensor, factor: int) -> Tensor:
    """Non-overlapping mean pooling of an (H, W, C) tensor by an integer factor."""
    h, w, c = x.shape
    if h % factor or w % factor:
        raise ValueError(f"pool factor {factor} must divide {h}x{w}")
    return x.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))


def roi_align_matrix(
    h: int, w: int, rect: Rect2D, out_size: int
) -> np.ndarray:
    """Constant (P*P, H*W) bilinear interpolation matrix for one rectangle.

    Each output bin averages 2x2 bilinear samples taken at the quarter points
    of the bin. Feature values live at cell centers (r + 0.5, c + 0.5); sample
    coordinates outside the grid clamp to the border cells. The rectangle must
    be axis-aligned in feature coordinates.
    """
    if abs(rect.angle) > 1e-12:
        raise ValueError("roi_align rectangles must be axis-aligned")
    if rect.size[0] <= 0.0 or rect.size[1] <= 0.0:
        raise ValueError("roi_align rectangle must have positive area")
    p = int(out_size)
    r0 = rect.center[0] - 0.5 * rect.size[0]
    c0 = rect.center[1] - 0.5 * rect.size[1]
    bin_h = rect.size[0] / p
    bin_w = rect.size[1] / p
    matrix = np.zeros((p * p, h * w), dtype=np.float64)
    for i in range(p):
        for j in range(p):
            row = i * p + j
            for oy in (0.25, 0.75):
                for ox in (0.25, 0.75):
                    u = r0 + (i + oy) * bin_h
                    v = c0 + (j + ox) * bin_w
                    fu = u - 0.5
                    fv = v - 0.5
                    u_lo = int(np.clip(math.floor(fu), 0, h - 1))
                    v_lo = int(np.clip(math.floor(fv), 0, w - 1))
                    u_hi = min(u_lo + 1, h - 1)
                    v_hi = min(v_lo + 1, w - 1)
                    tu = min(max(fu - u_lo, 0.0), 1.0)
                    tv = min(max(fv - v_lo, 0.0), 1.0)
                    for (uu, wu) in ((u_lo, 1.0 - tu), (u_hi, tu)):
                        for (vv, wv) in ((v_lo, 1.0 - tv), (v_hi, tv)):
                            matrix[row, uu * w + vv] += 0.25 * wu * wv
    return matrix


def roi_align(features, rect: Rect2D, out_size: int = 4):
    """Bilinear RoI pooling to (P, P, C); differentiable in the features."""
    tensor_in = isinstance(features, Tensor)
    feats = features if tensor_in else Tensor(features)
    if feats.data.ndim != 3:
        raise ValueError(f"features must be (H, W, C), got {feats.shape}")
    h, w, c = feats.shape
    matrix = Tensor(roi_align_matrix(h, w, rect, out_size))
    out = (matrix @ feats.reshape(h * w, c)).reshape(out_size, out_size, c)
    return out if tensor_in else out.data
