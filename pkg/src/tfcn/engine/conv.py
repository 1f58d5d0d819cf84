"""Grouped dilated 2-D convolution with hand-written forward and backward.

Arrays are float32 in (batch, channel, freq, time) layout. Three execution
paths produce the same result (within 1e-5):

* ``direct``  - loop over output coordinates, numpy-summed taps. Slow,
  shape-agnostic; kept as an in-engine cross-check.
* ``im2col``  - tensordot per channel group (tensordot performs the im2col
  copy and a BLAS matmul internally). Default; used for training.
* ``column``  - one einsum per output time column. Slowest of the vectorized
  paths but bitwise-reproducible per column regardless of how many columns
  surround it, which is what the streaming enhancer needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_METHOD = "im2col"

_METHODS = ("direct", "im2col", "column")


class ShapeError(ValueError):
    """Raised when tensor extents do not match a layer contract."""


@dataclass(frozen=True)
class ConvSpec:
    """Static description of one convolutional layer.

    ``kernel``/``dilation`` are (freq, time); ``pad`` is
    (left_f, right_f, left_t, right_t) in zeros added before the valid
    cross-correlation. ``groups == in_channels == out_channels`` identifies a
    depth-wise layer.
    """

    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    dilation: tuple[int, int] = (1, 1)
    groups: int = 1
    pad: tuple[int, int, int, int] = (0, 0, 0, 0)
    has_bias: bool = False

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "groups"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be positive, got {getattr(self, name)}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"channels ({self.in_channels} in, {self.out_channels} out) "
                f"must be divisible by groups={self.groups}")
        if min(self.kernel) < 1 or min(self.dilation) < 1:
            raise ShapeError(f"kernel {self.kernel} and dilation {self.dilation} must be >= 1")
        if min(self.pad) < 0:
            raise ShapeError(f"pad {self.pad} must be non-negative")

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, *self.kernel)

    def span(self) -> tuple[int, int]:
        """Dilated kernel extent per axis: (k - 1) * d + 1."""
        return ((self.kernel[0] - 1) * self.dilation[0] + 1,
                (self.kernel[1] - 1) * self.dilation[1] + 1)

    def out_size(self, n_f: int, n_t: int) -> tuple[int, int]:
        lf, rf, lt, rt = self.pad
        span_f, span_t = self.span()
        f_out = n_f + lf + rf - span_f + 1
        t_out = n_t + lt + rt - span_t + 1
        if f_out < 1:
            raise ShapeError(
                f"freq axis: dilated kernel span {span_f} exceeds padded input {n_f + lf + rf}")
        if t_out < 1:
            raise ShapeError(
                f"time axis: dilated kernel span {span_t} exceeds padded input {n_t + lt + rt}")
        return f_out, t_out


@dataclass
class Conv2dContext:
    """Forward byproducts needed by conv2d_backward."""

    spec: ConvSpec
    x: np.ndarray
    weight: np.ndarray
    out_shape: tuple[int, int, int, int]
    method: str = DEFAULT_METHOD


def _check_input(x: np.ndarray, spec: ConvSpec) -> None:
    if x.ndim != 4:
        raise ShapeError(f"expected (batch, channel, freq, time) input, got {x.ndim}-d")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"channel axis: input has {x.shape[1]} channels, spec expects {spec.in_channels}")


def _pad(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    lf, rf, lt, rt = spec.pad
    if lf == rf == lt == rt == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (lf, rf), (lt, rt)))


def _windows(xp: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Strided view (B, C, F_out, T_out, k_f, k_t) of dilated taps."""
    span_f, span_t = spec.span()
    win = sliding_window_view(xp, (span_f, span_t), axis=(2, 3))
    return win[..., ::spec.dilation[0], ::spec.dilation[1]]


def conv2d_forward(x, weight, spec: ConvSpec, bias=None, method=None):
    """Run the convolution; returns (output, context).

    ``x`` is (B, C_in, F, T) float32; ``weight`` is
    (C_out, C_in/groups, k_f, k_t). The context feeds conv2d_backward.
    """
    method = method or DEFAULT_METHOD
    if method not in _METHODS:
        raise ValueError(f"unknown conv method {method!r}")
    _check_input(x, spec)
    if tuple(weight.shape) != spec.weight_shape:
        raise ShapeError(f"weight shape {weight.shape} != expected {spec.weight_shape}")
    if spec.has_bias and bias is None:
        raise ShapeError("spec.has_bias is set but no bias given")
    f_out, t_out = spec.out_size(x.shape[2], x.shape[3])
    xp = _pad(x, spec)
    if method == "direct":
        y = _forward_direct(xp, weight, spec, f_out, t_out)
    elif method == "column":
        y = _forward_columns(xp, weight, spec, f_out, t_out)
    else:
        y = _forward_im2col(xp, weight, spec, f_out, t_out)
    if spec.has_bias:
        y += bias[None, :, None, None]
    ctx = Conv2dContext(spec=spec, x=x, weight=weight, out_shape=y.shape, method=method)
    return y, ctx


def _forward_direct(xp, weight, spec, f_out, t_out):
    b_sz = xp.shape[0]
    d_f, d_t = spec.dilation
    span_f, span_t = spec.span()
    c_per_g = spec.in_channels // spec.groups
    out_per_g = spec.out_channels // spec.groups
    y = np.empty((b_sz, spec.out_channels, f_out, t_out), dtype=np.float32)
    for b in range(b_sz):
        for oc in range(spec.out_channels):
            g = oc // out_per_g
            ch = slice(g * c_per_g, (g + 1) * c_per_g)
            w_oc = weight[oc]
            for f in range(f_out):
                for t in range(t_out):
                    patch = xp[b, ch, f:f + span_f:d_f, t:t + span_t:d_t]
                    y[b, oc, f, t] = np.float32((patch * w_oc).sum(dtype=np.float32))
    return y


def _forward_im2col(xp, weight, spec, f_out, t_out):
    b_sz = xp.shape[0]
    k_f, k_t = spec.kernel
    d_f, d_t = spec.dilation
    if spec.is_depthwise:
        # Tap accumulation: 9-ish broadcast FMAs beat materializing columns.
        y = np.zeros((b_sz, spec.out_channels, f_out, t_out), dtype=np.float32)
        tmp = np.empty_like(y)
        for i in range(k_f):
            for j in range(k_t):
                tap = weight[:, 0, i, j][None, :, None, None]
                np.multiply(xp[:, :, i * d_f:i * d_f + f_out, j * d_t:j * d_t + t_out],
                            tap, out=tmp)
                y += tmp
        return y
    win = _windows(xp, spec)
    c_per_g = spec.in_channels // spec.groups
    out_per_g = spec.out_channels // spec.groups
    y = np.empty((b_sz, spec.out_channels, f_out, t_out), dtype=np.float32)
    for g in range(spec.groups):
        win_g = win[:, g * c_per_g:(g + 1) * c_per_g]
        w_g = weight[g * out_per_g:(g + 1) * out_per_g]
        # (B, F, T, O) <- contract (c, k_f, k_t)
        out_g = np.tensordot(win_g, w_g, axes=([1, 4, 5], [1, 2, 3]))
        y[:, g * out_per_g:(g + 1) * out_per_g] = np.moveaxis(out_g, 3, 1)
    return y


def _column_einsum(win_t, w_g):
    """Shared per-column contraction; the streaming path calls this too.

    win_t: (B, groups, C/g, F_out, k_f, k_t), w_g: (groups, O/g, C/g, k_f, k_t).
    einsum with optimize=False keeps a fixed accumulation order so the result
    for a column does not depend on its neighbours.
    """
    win_t = np.ascontiguousarray(win_t, dtype=np.float32)
    return np.einsum("bgcfij,gocij->bgof", win_t, w_g, optimize=False)


def _forward_columns(xp, weight, spec, f_out, t_out):
    b_sz = xp.shape[0]
    c_per_g = spec.in_channels // spec.groups
    out_per_g = spec.out_channels // spec.groups
    win = _windows(xp, spec)
    win = win.reshape(b_sz, spec.groups, c_per_g, f_out, t_out, *spec.kernel)
    w_g = np.ascontiguousarray(weight.reshape(spec.groups, out_per_g, c_per_g, *spec.kernel))
    y = np.empty((b_sz, spec.out_channels, f_out, t_out), dtype=np.float32)
    for t in range(t_out):
        col = _column_einsum(win[:, :, :, :, t], w_g)
        y[:, :, :, t] = col.reshape(b_sz, spec.out_channels, f_out)
    return y


def conv2d_backward(grad_out, ctx: Conv2dContext):
    """Gradients wrt input, weight and bias from the saved forward context."""
    if tuple(grad_out.shape) != tuple(ctx.out_shape):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match forward output {ctx.out_shape}")
    spec = ctx.spec
    xp = _pad(ctx.x, spec)
    b_sz, _, f_out, t_out = grad_out.shape
    k_f, k_t = spec.kernel
    d_f, d_t = spec.dilation
    c_per_g = spec.in_channels // spec.groups
    out_per_g = spec.out_channels // spec.groups

    grad_xp = np.zeros_like(xp)
    grad_w = np.empty(spec.weight_shape, dtype=np.float32)

    if spec.is_depthwise:
        tmp = np.empty_like(grad_out)
        for i in range(k_f):
            for j in range(k_t):
                patch = xp[:, :, i * d_f:i * d_f + f_out, j * d_t:j * d_t + t_out]
                grad_w[:, 0, i, j] = np.einsum("bcft,bcft->c", grad_out, patch,
                                               optimize=True)
                tap = ctx.weight[:, 0, i, j][None, :, None, None]
                np.multiply(grad_out, tap, out=tmp)
                grad_xp[:, :, i * d_f:i * d_f + f_out, j * d_t:j * d_t + t_out] += tmp
    else:
        win = _windows(xp, spec)
        for g in range(spec.groups):
            osl = slice(g * out_per_g, (g + 1) * out_per_g)
            csl = slice(g * c_per_g, (g + 1) * c_per_g)
            go_g = grad_out[:, osl]
            # (O/g, C/g, k_f, k_t) <- contract (b, f, t)
            grad_w[osl] = np.tensordot(go_g, win[:, csl], axes=([0, 2, 3], [0, 2, 3]))
            w_g = ctx.weight[osl]
            for i in range(k_f):
                for j in range(k_t):
                    # (B, F, T, C/g) <- contract output channels
                    gx = np.tensordot(go_g, w_g[:, :, i, j], axes=([1], [0]))
                    grad_xp[:, csl, i * d_f:i * d_f + f_out, j * d_t:j * d_t + t_out] += (
                        np.moveaxis(gx, 3, 1))

    lf, _, lt, _ = spec.pad
    n_f, n_t = ctx.x.shape[2], ctx.x.shape[3]
    grad_x = grad_xp[:, :, lf:lf + n_f, lt:lt + n_t]
    grad_b = grad_out.sum(axis=(0, 2, 3)) if spec.has_bias else None
    return np.ascontiguousarray(grad_x), grad_w, grad_b
