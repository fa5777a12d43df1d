"""Differentiable primitives over (N, C, H, W) tensors.

Convolutions follow the deep-learning convention (cross-correlation, no
kernel flip).  Each op validates its inputs, computes the forward value with
vectorized numpy, and registers a backward closure on the result.  Gradients
are accumulated, so tensors used several times receive summed contributions.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, check_same_dtype, make_result


def _as_windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """View a padded (N, C, H, W) array as (N, C, Ho, Wo, k, k) windows."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _check_conv_geometry(x: Tensor, k: int, stride: int, pad: int, ctx: str) -> tuple[int, int]:
    if k < 1 or k % 2 == 0:
        raise ShapeError(f"{ctx}: kernel size must be odd and positive, got k={k}")
    if stride < 1:
        raise ShapeError(f"{ctx}: stride must be >= 1, got {stride}")
    if pad < 0:
        raise ShapeError(f"{ctx}: pad must be >= 0, got {pad}")
    n, c, h, w = x.shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeError(f"{ctx}: spatial size {h}x{w} too small for k={k}, stride={stride}, pad={pad}")
    return ho, wo


def _pad_spatial(a: np.ndarray, pad: int, value: float = 0.0) -> np.ndarray:
    if pad == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=value)


def _scatter_windows(gwin: np.ndarray, x_shape, k: int, stride: int, pad: int) -> np.ndarray:
    """Accumulate per-window gradients (N, C, Ho, Wo, k, k) back onto the input."""
    n, c, h, w = x_shape
    ho, wo = gwin.shape[2], gwin.shape[3]
    gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=gwin.dtype)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gwin[:, :, :, :, i, j]
    if pad:
        return gxp[:, :, pad : pad + h, pad : pad + w]
    return gxp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation with a (C_out, C_in, k, k) weight."""
    co, ci, k, k2 = weight.shape
    if k != k2:
        raise ShapeError(f"conv2d: weight kernel must be square, got {k}x{k2}")
    if x.shape[1] != ci:
        raise ShapeError(f"conv2d: input has C={x.shape[1]} channels but weight expects C_in={ci}")
    if bias is not None and bias.shape != (1, co, 1, 1):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match C_out={co}")
    check_same_dtype(x, weight, *( [bias] if bias is not None else [] ))
    ho, wo = _check_conv_geometry(x, k, stride, pad, "conv2d")

    xp = _pad_spatial(x.data, pad)
    win = _as_windows(xp, k, stride)  # (N, C, Ho, Wo, k, k)
    out = np.tensordot(win, weight.data, axes=[(1, 4, 5), (1, 2, 3)])  # (N, Ho, Wo, Co)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out += bias.data

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g: np.ndarray) -> None:
        if weight.requires_grad:
            gw = np.tensordot(g, win, axes=[(0, 2, 3), (0, 2, 3)])  # (Co, C, k, k)
            weight.accumulate_grad(gw)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3), keepdims=True))
        if x.requires_grad:
            gwin = np.tensordot(g, weight.data, axes=[(1,), (0,)])  # (N, Ho, Wo, C, k, k)
            gwin = gwin.transpose(0, 3, 1, 2, 4, 5)
            x.accumulate_grad(_scatter_windows(gwin, x.shape, k, stride, pad))

    return make_result(out, parents, backward)


def depthwise_conv2d(x: Tensor, weight: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Per-channel convolution with a (C, 1, k, k) weight (groups == C)."""
    c, one, k, k2 = weight.shape
    if one != 1 or k != k2:
        raise ShapeError(f"depthwise_conv2d: weight must be (C, 1, k, k), got {weight.shape}")
    if x.shape[1] != c:
        raise ShapeError(f"depthwise_conv2d: input has C={x.shape[1]} channels but weight has C={c}")
    check_same_dtype(x, weight)
    _check_conv_geometry(x, k, stride, pad, "depthwise_conv2d")

    xp = _pad_spatial(x.data, pad)
    win = _as_windows(xp, k, stride)  # (N, C, Ho, Wo, k, k)
    kern = weight.data[:, 0]  # (C, k, k)
    out = np.einsum("ncyxij,cij->ncyx", win, kern, optimize=True)

    def backward(g: np.ndarray) -> None:
        if weight.requires_grad:
            gw = np.einsum("ncyx,ncyxij->cij", g, win, optimize=True)
            weight.accumulate_grad(gw[:, None])
        if x.requires_grad:
            gwin = np.einsum("ncyx,cij->ncyxij", g, kern, optimize=True)
            x.accumulate_grad(_scatter_windows(gwin, x.shape, k, stride, pad))

    return make_result(out, (x, weight), backward)


# -- elementwise ------------------------------------------------------------


def _check_broadcast(x: Tensor, y: Tensor, ctx: str) -> bool:
    """Allow equal shapes, or y of shape (1|N, C, 1, 1) against (N, C, H, W)."""
    if x.shape == y.shape:
        return False
    if y.shape[1] != x.shape[1]:
        raise ShapeError(f"{ctx}: channel mismatch, x has C={x.shape[1]} but y has C={y.shape[1]}")
    if y.shape[2:] != (1, 1) or y.shape[0] not in (1, x.shape[0]):
        raise ShapeError(f"{ctx}: cannot broadcast shape {y.shape} against {x.shape}")
    return True


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    axes = tuple(i for i in range(4) if shape[i] == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


def add(x: Tensor, y: Tensor) -> Tensor:
    check_same_dtype(x, y)
    _check_broadcast(x, y, "add")
    out = x.data + y.data

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g)
        if y.requires_grad:
            y.accumulate_grad(_reduce_to(g, y.shape))

    return make_result(out, (x, y), backward)


def sub(x: Tensor, y: Tensor) -> Tensor:
    check_same_dtype(x, y)
    _check_broadcast(x, y, "sub")
    out = x.data - y.data

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g)
        if y.requires_grad:
            y.accumulate_grad(-_reduce_to(g, y.shape))

    return make_result(out, (x, y), backward)


def mul(x: Tensor, y: Tensor) -> Tensor:
    check_same_dtype(x, y)
    _check_broadcast(x, y, "mul")
    out = x.data * y.data

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(_reduce_to(g * y.data, x.shape))
        if y.requires_grad:
            y.accumulate_grad(_reduce_to(g * x.data, y.shape))

    return make_result(out, (x, y), backward)


def elementwise(x: Tensor, y: Tensor, op: str) -> Tensor:
    if op == "add":
        return add(x, y)
    if op == "mul":
        return mul(x, y)
    raise ShapeError(f"elementwise: unknown op {op!r} (expected 'add' or 'mul')")


def scale(x: Tensor, factor: float) -> Tensor:
    out = x.data * x.data.dtype.type(factor)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g * x.data.dtype.type(factor))

    return make_result(out, (x,), backward)


def add_scalar(x: Tensor, value: float) -> Tensor:
    out = x.data + x.data.dtype.type(value)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g)

    return make_result(out, (x,), backward)


# -- activations -------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g * (x.data > 0))

    return make_result(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g * out * (1.0 - out))

    return make_result(out, (x,), backward)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ShapeError(f"activation: unknown kind {kind!r} (expected 'relu' or 'sigmoid')")


# -- pooling and resampling ---------------------------------------------------


def max_pool_3x3_s2(x: Tensor) -> Tensor:
    """3x3 max pooling, stride 2, pad 1 (the stem pool)."""
    n, c, h, w = x.shape
    if h < 3 or w < 3:
        raise ShapeError(f"max_pool_3x3_s2: spatial size {h}x{w} must be at least 3x3")
    xp = _pad_spatial(x.data, 1, value=-np.inf)
    win = _as_windows(xp, 3, 2)  # (N, C, Ho, Wo, 3, 3)
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, ho, wo, 9)
    amax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, amax[..., None], axis=-1)[..., 0]

    def backward(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        gxp = np.zeros((n, c, h + 2, w + 2), dtype=g.dtype)
        for idx in range(9):
            i, j = divmod(idx, 3)
            contrib = g * (amax == idx)
            gxp[:, :, i : i + 2 * ho : 2, j : j + 2 * wo : 2] += contrib
        x.accumulate_grad(gxp[:, :, 1 : 1 + h, 1 : 1 + w])

    return make_result(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g / (h * w), x.shape))

    return make_result(out, (x,), backward)


def pool(x: Tensor, kind: str) -> Tensor:
    if kind == "max3x3s2":
        return max_pool_3x3_s2(x)
    if kind == "global_avg":
        return global_avg_pool(x)
    raise ShapeError(f"pool: unknown kind {kind!r} (expected 'max3x3s2' or 'global_avg')")


def resize_nearest(x: Tensor, factor: int) -> Tensor:
    """Replicate every pixel factor x factor (nearest-neighbour upsampling)."""
    if factor < 2:
        raise ShapeError(f"resize_nearest: factor must be >= 2, got {factor}")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)))

    return make_result(out, (x,), backward)


# -- channel plumbing ---------------------------------------------------------


def channel_concat(xs: list[Tensor]) -> Tensor:
    if not xs:
        raise ShapeError("channel_concat: need at least one tensor")
    check_same_dtype(*xs)
    first = xs[0]
    for i, t in enumerate(xs[1:], start=1):
        for axis, name in ((0, "N"), (2, "H"), (3, "W")):
            if t.shape[axis] != first.shape[axis]:
                raise ShapeError(
                    f"channel_concat: input {i} has {name}={t.shape[axis]}, expected {first.shape[axis]}"
                )
    out = np.concatenate([t.data for t in xs], axis=1)
    offsets = np.cumsum([0] + [t.shape[1] for t in xs])

    def backward(g: np.ndarray) -> None:
        for t, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t.accumulate_grad(g[:, lo:hi])

    return make_result(out, tuple(xs), backward)


def channel_slice(x: Tensor, lo: int, hi: int) -> Tensor:
    if not (0 <= lo < hi <= x.shape[1]):
        raise ShapeError(f"channel_slice: range [{lo}, {hi}) invalid for C={x.shape[1]}")
    out = np.ascontiguousarray(x.data[:, lo:hi])

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[:, lo:hi] = g
            x.accumulate_grad(gx)

    return make_result(out, (x,), backward)


def channel_split(x: Tensor, parts: int) -> list[Tensor]:
    c = x.shape[1]
    if parts < 1 or c % parts != 0:
        raise ShapeError(f"channel_split: C={c} is not divisible into {parts} parts")
    step = c // parts
    return [channel_slice(x, i * step, (i + 1) * step) for i in range(parts)]


# -- normalization -------------------------------------------------------------


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over (N, H, W) per channel.

    ``running_mean``/``running_var`` are plain (1, C, 1, 1) buffers, updated
    in place in training mode with the given momentum.
    """
    n, c, h, w = x.shape
    for name, t in (("gamma", gamma), ("beta", beta)):
        if t.shape != (1, c, 1, 1):
            raise ShapeError(f"batchnorm: {name} shape {t.shape} does not match C={c}")
    check_same_dtype(x, gamma, beta)

    if training:
        if n < 2:
            raise ShapeError(f"batchnorm: training mode needs batch size >= 2, got N={n}")
        mean = x.data.mean(axis=(0, 2, 3), keepdims=True)
        var = x.data.var(axis=(0, 2, 3), keepdims=True)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.astype(x.data.dtype, copy=False)
        var = running_var.astype(x.data.dtype, copy=False)

    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * ivar
    out = gamma.data * xhat + beta.data

    def backward(g: np.ndarray) -> None:
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3), keepdims=True))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(0, 2, 3), keepdims=True))
        if x.requires_grad:
            if training:
                dxhat = g * gamma.data
                m1 = dxhat.mean(axis=(0, 2, 3), keepdims=True)
                m2 = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                x.accumulate_grad(ivar * (dxhat - m1 - xhat * m2))
            else:
                x.accumulate_grad(g * gamma.data * ivar)

    return make_result(out, (x, gamma, beta), backward)


# -- attention combine ----------------------------------------------------------


def prm_combine(kx: Tensor, alpha: Tensor, beta: Tensor) -> Tensor:
    """kx * (1 + beta * alpha); alpha may be a per-channel (1|N, C, 1, 1) vector."""
    if beta.shape != kx.shape:
        raise ShapeError(f"prm_combine: beta shape {beta.shape} must equal kx shape {kx.shape}")
    check_same_dtype(kx, alpha, beta)
    _check_broadcast(kx, alpha, "prm_combine")
    weightmap = 1.0 + beta.data * alpha.data
    out = kx.data * weightmap

    def backward(g: np.ndarray) -> None:
        if kx.requires_grad:
            kx.accumulate_grad(g * weightmap)
        if beta.requires_grad:
            beta.accumulate_grad(g * kx.data * alpha.data)
        if alpha.requires_grad:
            alpha.accumulate_grad(_reduce_to(g * kx.data * beta.data, alpha.shape))

    return make_result(out, (kx, alpha, beta), backward)


# -- reductions ------------------------------------------------------------------


def sum_all(x: Tensor) -> Tensor:
    out = x.data.sum(keepdims=True)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g, x.shape))

    return make_result(out, (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.data.size)
