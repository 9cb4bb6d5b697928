"""Dense tensor kernels: convolution, activation, pooling, upsampling, combination.

Tensors are plain numpy arrays (float32 by default, float64 for gradient
checks). Every kernel accepts an optional leading batch axis, so a 1-D
convolution takes ``[C, L]`` or ``[N, C, L]`` and a 2-D convolution takes
``[C, H, W]`` or ``[N, C, H, W]``.

Convolutions are cross-correlations with symmetric zero padding, computed as
an im2col gather followed by one matrix product. The patch columns are laid
out channel-major then tap order, which fixes the accumulation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32

ACTIVATIONS = ("relu", "linear")
POOL_KINDS = ("max", "avg")
COMBINE_KINDS = ("add", "concat_channels")


class ShapeError(ValueError):
    """Raised when tensor shapes are inconsistent; ``axis`` names the culprit."""

    def __init__(self, message: str, axis: str | None = None):
        super().__init__(message)
        self.axis = axis


class GeometryError(ValueError):
    """Raised when a window/stride/padding combination yields no output."""


def as_tensor(x, dtype=None) -> np.ndarray:
    """Coerce ``x`` to a contiguous float array of rank 1-4."""
    arr = np.ascontiguousarray(x, dtype=dtype or DEFAULT_DTYPE)
    if not 1 <= arr.ndim <= 4:
        raise ShapeError(f"tensor rank must be 1-4, got {arr.ndim}", axis="rank")
    if 0 in arr.shape:
        raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}", axis="shape")
    return arr


def _tuple(v, n: int) -> tuple[int, ...]:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * n
    v = tuple(int(i) for i in v)
    if len(v) != n:
        raise GeometryError(f"expected {n} values, got {v}")
    return v


@dataclass(frozen=True)
class ConvGeometry:
    """Kernel/stride/padding per spatial axis plus channel counts.

    Also describes pooling windows (``kernel`` is the window) and residual
    blocks (``kernel`` is the inner conv size).
    """

    kernel: tuple[int, ...]
    stride: tuple[int, ...] = ()
    padding: tuple[int, ...] = ()
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        kernel = _tuple(self.kernel, len(self.kernel) if not isinstance(self.kernel, int) else 1)
        n = len(kernel)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "stride", _tuple(self.stride or 1, n))
        object.__setattr__(self, "padding", _tuple(self.padding or 0, n))
        if any(k < 1 for k in kernel):
            raise GeometryError(f"kernel sizes must be >= 1, got {kernel}")
        if any(s < 1 for s in self.stride):
            raise GeometryError(f"strides must be >= 1, got {self.stride}")
        if any(p < 0 for p in self.padding):
            raise GeometryError(f"padding must be >= 0, got {self.padding}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise GeometryError("channel counts must be positive")

    @classmethod
    def same(cls, kernel: int | Sequence[int], in_channels: int = 1, out_channels: int = 1):
        """Stride-1 geometry whose output length equals its input length."""
        k = _tuple(kernel, 1) if isinstance(kernel, int) else tuple(kernel)
        if any(v % 2 == 0 for v in k):
            raise GeometryError(f"'same' padding needs odd kernels, got {k}")
        return cls(k, (1,) * len(k), tuple(v // 2 for v in k), in_channels, out_channels)

    @property
    def ndim(self) -> int:
        return len(self.kernel)

    def output_size(self, spatial: Sequence[int]) -> tuple[int, ...]:
        if len(spatial) != self.ndim:
            raise ShapeError(
                f"geometry is {self.ndim}-D but input has {len(spatial)} spatial axes", axis="spatial"
            )
        out = tuple(
            (length + 2 * p - k) // s + 1
            for length, k, s, p in zip(spatial, self.kernel, self.stride, self.padding)
        )
        if any(o < 1 for o in out):
            raise GeometryError(
                f"window {self.kernel} (stride {self.stride}, pad {self.padding}) "
                f"does not fit input {tuple(spatial)}"
            )
        return out


def _check_conv(c_in_found: int, weights: np.ndarray, bias: np.ndarray, geom: ConvGeometry, nd: int):
    if weights.ndim != nd + 2:
        raise ShapeError(f"weights must have rank {nd + 2}, got {weights.shape}", axis="weights")
    if geom.ndim != nd:
        raise ShapeError(f"geometry is {geom.ndim}-D, kernel is {nd}-D", axis="kernel")
    c_out, c_in = weights.shape[:2]
    if c_in_found != c_in:
        raise ShapeError(f"input has {c_in_found} channels, weights expect {c_in}", axis="channels")
    if tuple(weights.shape[2:]) != geom.kernel:
        raise ShapeError(
            f"weights kernel {tuple(weights.shape[2:])} != geometry kernel {geom.kernel}", axis="kernel"
        )
    if bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} != ({c_out},)", axis="bias")
    if geom.in_channels != c_in or geom.out_channels != c_out:
        raise ShapeError(
            f"geometry channels {geom.in_channels}->{geom.out_channels} disagree with weights "
            f"{c_in}->{c_out}",
            axis="channels",
        )


def _to_cn(x: np.ndarray, spatial_dims: int) -> tuple[np.ndarray, bool]:
    """Public layouts ``[C, ...]`` / ``[N, C, ...]`` -> internal ``[C, N, ...]``."""
    if x.ndim == spatial_dims + 1:
        return x[:, None], True
    if x.ndim == spatial_dims + 2:
        return np.swapaxes(x, 0, 1), False
    raise ShapeError(
        f"expected [C, ...] or [N, C, ...] with {spatial_dims} spatial axes, got shape {x.shape}",
        axis="rank",
    )


def _from_cn(y: np.ndarray, squeeze: bool) -> np.ndarray:
    return y[:, 0] if squeeze else np.ascontiguousarray(np.swapaxes(y, 0, 1))


def _pad_last(x: np.ndarray, pads: Sequence[int]) -> np.ndarray:
    if not any(pads):
        return x
    nd = len(pads)
    out = np.zeros(x.shape[:-nd] + tuple(n + 2 * p for n, p in zip(x.shape[-nd:], pads)), x.dtype)
    out[(Ellipsis,) + tuple(slice(p, p + n) for p, n in zip(pads, x.shape[-nd:]))] = x
    return out


# --- 1-D convolution -------------------------------------------------------
#
# The *_cn kernels work on the channel-first layout [C, N, L] used inside
# models: the whole batch becomes one GEMM of [C_out, C_in*K] x [C_in*K, N*L_out].


def im2col_1d(x: np.ndarray, kernel: int, stride: int, pad: int) -> np.ndarray:
    """``[C, N, L]`` -> ``[C*K, N*L_out]`` patch matrix (channel-major, then tap)."""
    c, n, _ = x.shape
    win = sliding_window_view(_pad_last(x, (pad,)), kernel, axis=2)[:, :, ::stride, :]
    lo = win.shape[2]
    return np.ascontiguousarray(win.transpose(0, 3, 1, 2)).reshape(c * kernel, n * lo)


def col2im_1d(cols: np.ndarray, channels: int, batch: int, length: int, kernel: int, stride: int, pad: int):
    """Adjoint of :func:`im2col_1d`: scatter-add patch gradients back to ``[C, N, L]``."""
    cols = cols.reshape(channels, kernel, batch, -1)
    lo = cols.shape[3]
    out = np.zeros((channels, batch, length + 2 * pad), dtype=cols.dtype)
    span = stride * (lo - 1) + 1
    for k in range(kernel):
        out[:, :, k : k + span : stride] += cols[:, k]
    return out[:, :, pad : pad + length] if pad else out


def conv1d_cn(x, weights, bias, geom: ConvGeometry):
    """1-D conv on ``[C_in, N, L]``; returns ``([C_out, N, L_out], patches)``."""
    _check_conv(x.shape[0], weights, bias, geom, 1)
    (lo,) = geom.output_size(x.shape[2:])
    (k,), (s,), (p,) = geom.kernel, geom.stride, geom.padding
    cols = im2col_1d(x, k, s, p)
    y = weights.reshape(weights.shape[0], -1) @ cols
    y += bias[:, None]
    return y.reshape(weights.shape[0], x.shape[1], lo), cols


def conv1d_cn_backward(dy, cols, x_shape, weights, geom: ConvGeometry):
    """Returns ``(dx, dw, db)`` for :func:`conv1d_cn` given the upstream gradient."""
    c, n, length = x_shape
    o = weights.shape[0]
    dy2 = dy.reshape(o, -1)
    dw = dy2 @ cols.T
    db = dy2.sum(axis=1)
    dcols = weights.reshape(o, -1).T @ dy2
    (k,), (s,), (p,) = geom.kernel, geom.stride, geom.padding
    dx = col2im_1d(dcols, c, n, length, k, s, p)
    return dx, dw.reshape(weights.shape), db


def conv1d(x, weights, bias, geom: ConvGeometry) -> np.ndarray:
    """1-D cross-correlation: ``[C_in, L]`` (or ``[N, C_in, L]``) -> ``[C_out, L_out]``."""
    xcn, squeeze = _to_cn(np.asarray(x), 1)
    y, _ = conv1d_cn(xcn, weights, bias, geom)
    return _from_cn(y, squeeze)


# --- 2-D convolution -------------------------------------------------------


def im2col_2d(x: np.ndarray, kernel, stride, pad) -> np.ndarray:
    """``[C, N, H, W]`` -> ``[C*KH*KW, N*H_out*W_out]`` patch matrix."""
    c, n = x.shape[:2]
    (kh, kw), (sh, sw) = kernel, stride
    win = sliding_window_view(_pad_last(x, pad), (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    ho, wo = win.shape[2:4]
    return np.ascontiguousarray(win.transpose(0, 4, 5, 1, 2, 3)).reshape(c * kh * kw, n * ho * wo)


def col2im_2d(cols, channels, batch, size, kernel, stride, pad, out_size):
    (h, w), (kh, kw), (sh, sw), (ph, pw), (ho, wo) = size, kernel, stride, pad, out_size
    cols = cols.reshape(channels, kh, kw, batch, ho, wo)
    out = np.zeros((channels, batch, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    span_h, span_w = sh * (ho - 1) + 1, sw * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + span_h : sh, j : j + span_w : sw] += cols[:, i, j]
    return out[:, :, ph : ph + h, pw : pw + w]


def conv2d_cn(x, weights, bias, geom: ConvGeometry):
    """2-D conv on ``[C_in, N, H, W]``; returns ``([C_out, N, H_out, W_out], patches)``."""
    _check_conv(x.shape[0], weights, bias, geom, 2)
    ho, wo = geom.output_size(x.shape[2:])
    cols = im2col_2d(x, geom.kernel, geom.stride, geom.padding)
    y = weights.reshape(weights.shape[0], -1) @ cols
    y += bias[:, None]
    return y.reshape(weights.shape[0], x.shape[1], ho, wo), cols


def conv2d_cn_backward(dy, cols, x_shape, weights, geom: ConvGeometry):
    c, n, h, w = x_shape
    o = weights.shape[0]
    ho, wo = dy.shape[2:]
    dy2 = dy.reshape(o, -1)
    dw = dy2 @ cols.T
    db = dy2.sum(axis=1)
    dcols = weights.reshape(o, -1).T @ dy2
    dx = col2im_2d(dcols, c, n, (h, w), geom.kernel, geom.stride, geom.padding, (ho, wo))
    return dx, dw.reshape(weights.shape), db


def conv2d(x, weights, bias, geom: ConvGeometry) -> np.ndarray:
    """2-D cross-correlation: ``[C_in, H, W]`` (or batched) -> ``[C_out, H_out, W_out]``."""
    xcn, squeeze = _to_cn(np.asarray(x), 2)
    y, _ = conv2d_cn(xcn, weights, bias, geom)
    return _from_cn(y, squeeze)


# --- elementwise and resampling ops -----------------------------------------


def activation(x, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "linear":
        return x
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_backward(dy, y, kind: str):
    """Gradient through an activation given its *output* ``y``."""
    if kind == "relu":
        return dy * (y > 0)
    return dy


def _pool_view(x: np.ndarray, geom: ConvGeometry):
    nd = geom.ndim
    if x.ndim < nd + 1:
        raise ShapeError(f"pool over {nd} axes needs rank >= {nd + 1}, got {x.shape}", axis="rank")
    geom.output_size(x.shape[-nd:])
    xp = _pad_last(x, geom.padding)
    axes = tuple(range(x.ndim - nd, x.ndim))
    win = sliding_window_view(xp, geom.kernel, axis=axes)
    slicer = (Ellipsis,) + tuple(slice(None, None, s) for s in geom.stride) + (slice(None),) * nd
    # move the nd window axes after the strided positions: [..., *out, *window]
    return win[slicer]


def pool(x, kind: str, window, stride=None, padding=0) -> np.ndarray:
    """Sliding-window max/avg along the last axis (last two for a 2-D window).

    ``window`` is an int for 1-D pooling or a pair for 2-D pooling.
    """
    y, _ = pool_forward(x, kind, _pool_geom(window, stride, padding))
    return y


def _pool_geom(window, stride, padding) -> ConvGeometry:
    w = (window,) if isinstance(window, (int, np.integer)) else tuple(window)
    s = stride if stride is not None else w
    return ConvGeometry(w, _tuple(s, len(w)), _tuple(padding, len(w)))


def pool_forward(x, kind: str, geom: ConvGeometry, index=None):
    """Returns ``(y, argmax)``; a given max-pool ``index`` is used instead of the argmax."""
    x = np.asarray(x)
    if kind not in POOL_KINDS:
        raise ValueError(f"unknown pool kind {kind!r}; expected one of {POOL_KINDS}")
    win = _pool_view(x, geom)
    nd = geom.ndim
    out_shape = win.shape[: win.ndim - nd]
    flat = win.reshape(out_shape + (-1,))
    if kind == "max":
        idx = flat.argmax(axis=-1) if index is None else index
        y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        return y, idx
    return flat.mean(axis=-1, dtype=x.dtype).astype(x.dtype, copy=False), None


def pool_backward(dy, cache, x_shape, kind: str, geom: ConvGeometry):
    nd = geom.ndim
    lead = x_shape[: len(x_shape) - nd]
    padded = tuple(n + 2 * p for n, p in zip(x_shape[-nd:], geom.padding))
    dxp = np.zeros(lead + padded, dtype=dy.dtype)
    out = dy.shape[-nd:]
    ksize = int(np.prod(geom.kernel))
    for t in range(ksize):
        offs = np.unravel_index(t, geom.kernel)
        target = (Ellipsis,) + tuple(
            slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offs, geom.stride, out)
        )
        if kind == "max":
            dxp[target] += dy * (cache == t)
        else:
            dxp[target] += dy / ksize
    crop = (Ellipsis,) + tuple(slice(p, p + n) for p, n in zip(geom.padding, x_shape[-nd:]))
    return dxp[crop]


def upsample(x, factor) -> np.ndarray:
    """Nearest-neighbour repetition along the trailing spatial axes.

    ``factor`` is an int (last axis) or a tuple covering the trailing axes,
    e.g. ``(1, f)`` for ``[C, 1, W]`` tensors.
    """
    x = np.asarray(x)
    factors = (int(factor),) if isinstance(factor, (int, np.integer)) else tuple(int(f) for f in factor)
    if any(f < 1 for f in factors):
        raise GeometryError(f"upsample factors must be >= 1, got {factors}")
    for i, f in enumerate(factors):
        if f > 1:
            x = np.repeat(x, f, axis=x.ndim - len(factors) + i)
    return x


def upsample_backward(dy, factor):
    factors = (int(factor),) if isinstance(factor, (int, np.integer)) else tuple(factor)
    nd = len(factors)
    for i, f in enumerate(factors):
        if f > 1:
            ax = dy.ndim - nd + i
            shape = dy.shape[:ax] + (dy.shape[ax] // f, f) + dy.shape[ax + 1 :]
            dy = dy.reshape(shape).sum(axis=ax + 1)
    return dy


def combine(a, b, kind: str, channel_axis: int = 0) -> np.ndarray:
    """Residual add or channel concatenation (``channel_axis`` 1 for batched input)."""
    a, b = np.asarray(a), np.asarray(b)
    if kind == "add":
        if a.shape != b.shape:
            raise ShapeError(f"add needs identical shapes, got {a.shape} and {b.shape}", axis="shape")
        return a + b
    if kind == "concat_channels":
        if a.ndim != b.ndim or a.shape[:channel_axis] + a.shape[channel_axis + 1 :] != (
            b.shape[:channel_axis] + b.shape[channel_axis + 1 :]
        ):
            raise ShapeError(
                f"concat needs shapes equal off the channel axis, got {a.shape} and {b.shape}",
                axis="spatial",
            )
        return np.concatenate([a, b], axis=channel_axis)
    raise ValueError(f"unknown combine kind {kind!r}; expected one of {COMBINE_KINDS}")
