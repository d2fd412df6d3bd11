"""Segmentation and registration losses with hand-written gradients."""
from __future__ import annotations

import numpy as np

from ..errors import ArgumentError
from .core import Tensor, make_node

DICE_EPS = 1e-5
SIMPLEX_TOL = 1e-4


def _check_simplex(probs: Tensor):
    sums = probs.data.sum(axis=0)
    if np.any(probs.data < -SIMPLEX_TOL) or np.max(np.abs(sums - 1)) > SIMPLEX_TOL:
        raise ArgumentError("probabilities must form a simplex over the class axis (axis 0)")


def one_hot(labels: np.ndarray, n_classes: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((n_classes,) + labels.shape, dtype=dtype)
    np.put_along_axis(out, labels[None].astype(np.intp), 1, axis=0)
    return out


def dice_loss(probs: Tensor, one_hot_target, eps: float = DICE_EPS) -> Tensor:
    """1 - mean over classes of (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps)."""
    t = np.asarray(one_hot_target, dtype=probs.dtype)
    if t.shape != probs.shape:
        raise ArgumentError(f"dice_loss shape mismatch {probs.shape} vs {t.shape}")
    _check_simplex(probs)
    k = probs.shape[0]
    axes = tuple(range(1, probs.ndim))
    p = probs.data
    inter = (p * t).sum(axis=axes)
    denom = p.sum(axis=axes) + t.sum(axis=axes) + eps
    score = (2 * inter + eps) / denom
    out = np.asarray(1 - score.mean(), dtype=probs.dtype)
    bshape = (k,) + (1,) * (probs.ndim - 1)

    def back(g):
        num = 2 * inter + eps
        d = (2 * t * denom.reshape(bshape) - num.reshape(bshape)) / (denom ** 2).reshape(bshape)
        return (-(g / k) * d,)

    return make_node(out, (probs,), back)


def cross_entropy(probs: Tensor, target) -> Tensor:
    """Mean negative log-probability of the target class; target holds integer labels."""
    target = np.asarray(target)
    if target.shape != probs.shape[1:]:
        raise ArgumentError(f"cross_entropy shape mismatch {probs.shape} vs target {target.shape}")
    if target.min() < 0 or target.max() >= probs.shape[0]:
        raise ArgumentError("target labels out of range for the class axis")
    _check_simplex(probs)
    floor = 1e-8
    idx = target[None].astype(np.intp)
    pt = np.take_along_axis(probs.data, idx, axis=0)[0]
    n = target.size
    out = np.asarray(-np.log(np.maximum(pt, floor)).sum() / n, dtype=probs.dtype)

    # The floor guards only the reported value. The gradient uses the
    # unclamped -1/p so confidently wrong voxels keep being corrected once it
    # is chained through the softmax, where it becomes the bounded (p - y).
    tiny = np.finfo(probs.dtype).tiny

    def back(g):
        grad = np.zeros_like(probs.data)
        local = (-1.0 / (n * np.maximum(pt.astype(np.float64), tiny))).astype(probs.dtype)
        np.put_along_axis(grad, idx, (g * local)[None], axis=0)
        return (grad,)

    return make_node(out, (probs,), back)


def segmentation_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """dice_loss + cross_entropy against an integer label array."""
    from .ops import add
    return add(dice_loss(probs, one_hot(labels, probs.shape[0], probs.dtype)), cross_entropy(probs, labels))


def mse(a: Tensor, b) -> Tensor:
    b = np.asarray(b, dtype=a.dtype)
    if b.shape != a.shape:
        raise ArgumentError(f"mse shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b
    n = diff.size
    out = np.asarray((diff ** 2).sum() / n, dtype=a.dtype)
    return make_node(out, (a,), lambda g: (g * 2 * diff / n,))
