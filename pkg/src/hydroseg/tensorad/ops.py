"""Differentiable operations.

Every op computes its forward result eagerly and, when any input is
recorded, attaches a closure mapping the output gradient to one gradient
per input (``None`` for inputs that need none).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ArgumentError
from .core import Tensor, as_tensor, make_node


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = a.data + b.data
    return make_node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = a.data - b.data
    return make_node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = a.data * b.data
    return make_node(
        out, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def tsum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return make_node(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.sum() / n, dtype=x.dtype)
    return make_node(out, (x,), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(x.data * mask, (x,), lambda g: (g * mask,))


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, perm=None) -> Tensor:
    perm = tuple(reversed(range(x.ndim))) if perm is None else tuple(perm)
    inv = tuple(np.argsort(perm))
    return make_node(np.transpose(x.data, perm), (x,), lambda g: (np.transpose(g, inv),))


def _canonical_sum(terms, axis):
    # Summing sorted terms gives a result independent of the terms' order.
    # The reduced axis is moved last and made contiguous because numpy's
    # rounding for other axes can depend on an element's column position.
    ordered = np.ascontiguousarray(np.moveaxis(np.sort(terms, axis=axis), axis, -1))
    return ordered.sum(axis=-1)


def matmul(a: Tensor, b: Tensor, canonical: bool = False) -> Tensor:
    """2-D matrix product. ``canonical`` makes every dot product order-invariant (slow)."""
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ArgumentError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    if canonical:
        out = _canonical_sum(a.data[:, :, None] * b.data[None, :, :], axis=1)
    else:
        out = a.data @ b.data
    return make_node(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ArgumentError("concat needs at least one tensor")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_node(out, tensors, back)


def softmax(x: Tensor, axis=-1, canonical: bool = False) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    denom = np.expand_dims(_canonical_sum(e, axis), axis) if canonical else e.sum(axis=axis, keepdims=True)
    s = e / denom

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_node(s, (x,), back)


def conv3(x: Tensor, weights: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """3D cross-correlation of a (Cin, D, H, W) tensor with (Cout, Cin, k, k, k) weights."""
    if x.ndim != 4 or weights.ndim != 5:
        raise ArgumentError(f"conv3 expects (Cin,D,H,W) input and (Cout,Cin,k,k,k) weights, got {x.shape}, {weights.shape}")
    cout, cin, kd, kh, kw = weights.shape
    if not (kd == kh == kw) or kd % 2 == 0:
        raise ArgumentError(f"conv3 kernels must be cubic and odd-sized, got {weights.shape[2:]}")
    if cin != x.shape[0]:
        raise ArgumentError(f"conv3 channel mismatch: input has {x.shape[0]}, weights expect {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ArgumentError(f"conv3 bias must have shape ({cout},), got {bias.shape}")
    k, s = kd, int(stride)
    spatial = x.shape[1:]
    out_sp = tuple((n + 2 * pad - k) // s + 1 for n in spatial)
    if min(out_sp) < 1:
        raise ArgumentError(f"conv3 output would be empty for input {spatial}, k={k}, pad={pad}")
    xp = np.pad(x.data, ((0, 0),) + ((pad, pad),) * 3) if pad else x.data
    if k == 1:
        cols = xp[:, ::s, ::s, ::s][:, :out_sp[0], :out_sp[1], :out_sp[2]].reshape(cin, -1)
    else:
        win = sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))[:, ::s, ::s, ::s]
        win = win[:, :out_sp[0], :out_sp[1], :out_sp[2]]
        cols = np.ascontiguousarray(win.transpose(0, 4, 5, 6, 1, 2, 3)).reshape(cin * k ** 3, -1)
    w2 = weights.data.reshape(cout, -1)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape((cout,) + out_sp)

    def back(g):
        g2 = g.reshape(cout, -1)
        gw = (g2 @ cols.T).reshape(weights.shape) if weights.recorded else None
        gb = g2.sum(axis=1) if bias is not None and bias.recorded else None
        gx = None
        if x.recorded:
            gcols = (w2.T @ g2).reshape((cin, k, k, k) + out_sp)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            d, h, w = out_sp
            for a in range(k):
                for b in range(k):
                    for c in range(k):
                        gxp[:, a:a + s * (d - 1) + 1:s, b:b + s * (h - 1) + 1:s, c:c + s * (w - 1) + 1:s] += gcols[:, a, b, c]
            gx = gxp[:, pad:pad + spatial[0], pad:pad + spatial[1], pad:pad + spatial[2]] if pad else gxp
        return gx, gw, gb

    return make_node(out, (x, weights) + ((bias,) if bias is not None else ()), back)


def downsample2(x: Tensor) -> Tensor:
    """2x max-pool over the three trailing axes; gradient goes to the first maximum."""
    c, d, h, w = x.shape
    if d % 2 or h % 2 or w % 2:
        raise ArgumentError(f"downsample2 needs even spatial extents, got {x.shape[1:]}")
    blocks = x.data.reshape(c, d // 2, 2, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 5, 2, 4, 6)
    blocks = blocks.reshape(c, d // 2, h // 2, w // 2, 8)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = gb.reshape(c, d // 2, h // 2, w // 2, 2, 2, 2).transpose(0, 1, 4, 2, 5, 3, 6)
        return (gb.reshape(c, d, h, w),)

    return make_node(out, (x,), back)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour doubling of the three trailing axes."""
    c, d, h, w = x.shape
    out = x.data[:, :, None, :, None, :, None]
    out = np.broadcast_to(out, (c, d, 2, h, 2, w, 2)).reshape(c, 2 * d, 2 * h, 2 * w)

    def back(g):
        return (g.reshape(c, d, 2, h, 2, w, 2).sum(axis=(2, 4, 6)),)

    return make_node(np.ascontiguousarray(out), (x,), back)


def crop(x: Tensor, lo, hi) -> Tensor:
    """Slice the three trailing axes to ``[lo, hi)`` given in (d, h, w) order."""
    sl = (slice(None),) + tuple(slice(a, b) for a, b in zip(lo, hi))

    def back(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[sl] = g
        return (full,)

    return make_node(x.data[sl].copy(), (x,), back)
