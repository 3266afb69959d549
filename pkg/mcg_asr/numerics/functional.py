"""
Differentiable primitives built on :class:`Tensor`.

Axis convention for 2-D convolution is (batch, channel, time, freq); sequence
primitives take (batch, time, feature). Every primitive validates its operand
shapes and raises :class:`ShapeError` naming itself and both shapes.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .tensor import Array, Tensor, is_grad_enabled

Pair = Tuple[int, int]


def _pair(v: Union[int, Sequence[int]]) -> Pair:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------

def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return Tensor._from_op(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    a = x.data
    return Tensor._from_op(np.log(a), (x,), lambda g: (g / a,), "log")


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = x.data
    return Tensor._from_op(np.abs(a), (x,), lambda g: (g * np.sign(a),), "abs")


def sigmoid(x: Tensor) -> Tensor:
    a = x.data
    y = np.empty_like(a)
    pos = a >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    y[~pos] = ea / (1.0 + ea)
    return Tensor._from_op(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor._from_op(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(x: Tensor) -> Tensor:
    a = x.data
    return Tensor._from_op(np.maximum(a, 0.0), (x,), lambda g: (g * (a > 0),), "relu")


def prelu(x: Tensor, alpha: Tensor, axis: int = 1) -> Tensor:
    """Parametric ReLU with one slope per channel along ``axis``."""
    a = x.data
    if alpha.ndim != 1 or alpha.shape[0] != a.shape[axis]:
        raise ShapeError("prelu", a.shape, alpha.shape, f"one slope per channel on axis {axis}")
    view = [1] * a.ndim
    view[axis] = -1
    slope = alpha.data.reshape(view)
    neg = a < 0
    reduce_axes = tuple(i for i in range(a.ndim) if i != axis)

    def backward(g: Array):
        gx = np.where(neg, g * slope, g)
        galpha = (g * np.where(neg, a, 0.0)).sum(axis=reduce_axes)
        return gx, galpha

    return Tensor._from_op(np.where(neg, a * slope, a), (x, alpha), backward, "prelu")


def swish(x: Tensor) -> Tensor:
    a = x.data
    s = 1.0 / (1.0 + np.exp(-a))
    y = a * s

    def backward(g: Array):
        return (g * (s + a * s * (1.0 - s)),)

    return Tensor._from_op(y, (x,), backward, "swish")


def glu(x: Tensor, axis: int = -1) -> Tensor:
    """Gated linear unit: first half times sigmoid of the second half."""
    a = x.data
    if a.shape[axis] % 2:
        raise ShapeError("glu", a.shape, None, f"axis {axis} must have even size")
    left, right = np.split(a, 2, axis=axis)
    gate = 1.0 / (1.0 + np.exp(-right))

    def backward(g: Array):
        return (np.concatenate([g * gate, g * left * gate * (1.0 - gate)], axis=axis),)

    return Tensor._from_op(left * gate, (x,), backward, "glu")


def where(mask: Array, x: Tensor, fill: float = 0.0) -> Tensor:
    """Keep ``x`` where ``mask`` is true, ``fill`` elsewhere (mask is a constant)."""
    m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    return Tensor._from_op(np.where(m, x.data, fill), (x,), lambda g: (np.where(m, g, 0.0),), "where")


# ---------------------------------------------------------------------------
# Softmax family
# ---------------------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    a = x.data
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g: Array):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(y, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    a = x.data
    shifted = a - a.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def backward(g: Array):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(y, (x,), backward, "log_softmax")


# ---------------------------------------------------------------------------
# Structure
# ---------------------------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; every other axis must agree."""
    ref = tensors[0].shape
    nd = len(ref)
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != ref[i] for i in range(nd) if i != ax):
            raise ShapeError("concat", ref, t.shape, f"axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g: Array):
        return tuple(np.split(g, bounds, axis=ax))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors),
                           backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != ref:
            raise ShapeError("stack", ref, t.shape)
    n = len(tensors)

    def backward(g: Array):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return Tensor._from_op(np.stack([t.data for t in tensors], axis=axis), tuple(tensors),
                           backward, "stack")


def pad(x: Tensor, widths: Sequence[Tuple[int, int]]) -> Tensor:
    widths = [tuple(w) for w in widths]
    if len(widths) != x.ndim:
        raise ShapeError("pad", x.shape, (len(widths),), "one (before, after) pair per axis")
    crop = tuple(slice(b, b + n) for (b, _), n in zip(widths, x.shape))
    return Tensor._from_op(np.pad(x.data, widths), (x,), lambda g: (g[crop],), "pad")


def detach(x: Tensor) -> Tensor:
    return x.detach()


def l1_mean(a: Tensor, b: Tensor, mask: Optional[Array] = None) -> Tensor:
    """Mean absolute difference, optionally restricted to ``mask`` positions."""
    if a.shape != b.shape:
        raise ShapeError("l1_mean", a.shape, b.shape)
    diff = abs(a - b)
    if mask is None:
        return diff.mean()
    m = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    count = int(m.sum())
    if count == 0:
        return (diff * 0.0).sum()
    return where(m, diff).sum() * (1.0 / count)


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout with p > 0 in training mode needs an explicit generator")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return Tensor._from_op(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------------------
# Linear / convolution
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` with weight shaped (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError("linear", x.shape, weight.shape)
    out = x @ weight
    return out + bias if bias is not None else out


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: Union[int, Pair] = 1, padding: Union[int, Pair] = 0) -> Tensor:
    """2-D cross-correlation. x: (B, Cin, H, W); weight: (Cout, Cin, kh, kw)."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv2d", x.shape, weight.shape)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    cout, cin, kh, kw = weight.shape
    B, _, H, W = x.shape
    Hp, Wp = H + 2 * ph, W + 2 * pw
    if Hp < kh or Wp < kw:
        raise ShapeError("conv2d", x.shape, weight.shape, "input smaller than kernel")
    Ho = (Hp - kh) // sh + 1
    Wo = (Wp - kw) // sw + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :Ho, :Wo]
    w = weight.data
    out = np.einsum("bchwij,ocij->bohw", windows, w, optimize=True)

    def backward(g: Array):
        gw = np.einsum("bchwij,bohw->ocij", windows, g, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + sh * Ho:sh, j:j + sw * Wo:sw] += np.einsum(
                    "bohw,oc->bchw", g, w[:, :, i, j], optimize=True)
        gx = gxp[:, :, ph:ph + H, pw:pw + W]
        return gx, gw

    result = Tensor._from_op(out, (x, weight), backward, "conv2d")
    if bias is not None:
        result = result + bias.reshape(1, cout, 1, 1)
    return result


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
                     stride: Union[int, Pair] = 1, padding: Union[int, Pair] = 0,
                     output_padding: Union[int, Pair] = 0) -> Tensor:
    """Transposed 2-D convolution. x: (B, Cin, H, W); weight: (Cin, Cout, kh, kw)."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise ShapeError("conv_transpose2d", x.shape, weight.shape)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    oh, ow = _pair(output_padding)
    cin, cout, kh, kw = weight.shape
    B, _, H, W = x.shape
    Hf = (H - 1) * sh + kh + oh
    Wf = (W - 1) * sw + kw + ow
    Ho, Wo = Hf - 2 * ph, Wf - 2 * pw
    if Ho <= 0 or Wo <= 0:
        raise ShapeError("conv_transpose2d", x.shape, weight.shape, "padding removes the whole output")
    a, w = x.data, weight.data
    full = np.zeros((B, cout, Hf, Wf), dtype=a.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, :, i:i + sh * H:sh, j:j + sw * W:sw] += np.einsum(
                "bchw,co->bohw", a, w[:, :, i, j], optimize=True)
    out = full[:, :, ph:ph + Ho, pw:pw + Wo]

    def backward(g: Array):
        gfull = np.zeros((B, cout, Hf, Wf), dtype=g.dtype)
        gfull[:, :, ph:ph + Ho, pw:pw + Wo] = g
        gx = np.zeros_like(a)
        gw = np.zeros_like(w)
        for i in range(kh):
            for j in range(kw):
                gs = gfull[:, :, i:i + sh * H:sh, j:j + sw * W:sw]
                gx += np.einsum("bohw,co->bchw", gs, w[:, :, i, j], optimize=True)
                gw[:, :, i, j] = np.einsum("bchw,bohw->co", a, gs, optimize=True)
        return gx, gw

    result = Tensor._from_op(np.ascontiguousarray(out), (x, weight), backward, "conv_transpose2d")
    if bias is not None:
        result = result + bias.reshape(1, cout, 1, 1)
    return result


def depthwise_conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Per-channel convolution over time with 'same' padding. x: (B, T, C); weight: (C, k)."""
    if x.ndim != 3 or weight.ndim != 2 or x.shape[2] != weight.shape[0]:
        raise ShapeError("depthwise_conv1d", x.shape, weight.shape)
    C, k = weight.shape
    if k % 2 == 0:
        raise ShapeError("depthwise_conv1d", x.shape, weight.shape, "kernel must be odd")
    half = k // 2
    B, T, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (half, half), (0, 0)))
    windows = sliding_window_view(xp, k, axis=1)  # (B, T, C, k)
    w = weight.data
    out = np.einsum("btck,ck->btc", windows, w, optimize=True)

    def backward(g: Array):
        gw = np.einsum("btck,btc->ck", windows, g, optimize=True)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, j:j + T, :] += g * w[:, j]
        return gxp[:, half:half + T, :], gw

    result = Tensor._from_op(out, (x, weight), backward, "depthwise_conv1d")
    if bias is not None:
        result = result + bias
    return result


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError("layer_norm", x.shape, gamma.shape)
    a = x.data
    mu = a.mean(axis=-1, keepdims=True)
    var = a.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a - mu) * inv
    gm = gamma.data
    reduce_axes = tuple(range(a.ndim - 1))
    n = a.shape[-1]

    def backward(g: Array):
        gxhat = g * gm
        gx = inv / n * (n * gxhat - gxhat.sum(axis=-1, keepdims=True)
                        - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return Tensor._from_op(xhat * gm + beta.data, (x, gamma, beta), backward, "layer_norm")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: Array, running_var: Array,
               training: bool, momentum: float = 0.1, eps: float = 1e-5, axis: int = 1) -> Tensor:
    """
    Batch normalization over every axis except ``axis``.

    In training mode batch statistics are used; running statistics are
    updated in place only when gradients are enabled, so passes run under
    ``no_grad`` share the train-mode behaviour without touching them.
    """
    a = x.data
    C = a.shape[axis]
    if gamma.shape != (C,) or running_mean.shape != (C,):
        raise ShapeError("batch_norm", a.shape, gamma.shape, f"channel axis {axis}")
    view = [1] * a.ndim
    view[axis] = C
    reduce_axes = tuple(i for i in range(a.ndim) if i != axis)
    gm = gamma.data.reshape(view)

    if not training:
        inv = 1.0 / np.sqrt(running_var.reshape(view) + eps)
        xhat = (a - running_mean.reshape(view)) * inv

        def backward_eval(g: Array):
            return g * gm * inv, (g * xhat).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

        return Tensor._from_op(xhat * gm + beta.data.reshape(view), (x, gamma, beta),
                               backward_eval, "batch_norm")

    n = a.size // C
    mu = a.mean(axis=reduce_axes, keepdims=True)
    var = a.var(axis=reduce_axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a - mu) * inv
    if is_grad_enabled():
        unbiased = var.reshape(C) * (n / max(n - 1, 1))
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu.reshape(C)
        running_var *= (1.0 - momentum)
        running_var += momentum * unbiased

    def backward(g: Array):
        gxhat = g * gm
        gx = inv / n * (n * gxhat - gxhat.sum(axis=reduce_axes, keepdims=True)
                        - xhat * (gxhat * xhat).sum(axis=reduce_axes, keepdims=True))
        return gx, (g * xhat).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return Tensor._from_op(xhat * gm + beta.data.reshape(view), (x, gamma, beta), backward, "batch_norm")
