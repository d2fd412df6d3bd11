"""Spatial-transformer and field-regularizer ops for learned registration."""
from __future__ import annotations

import numpy as np

from ..errors import ArgumentError
from ..volcore import sample_grid
from ..warpfield import sample_points, smoothness_energy_array
from .core import Tensor, make_node


def spatial_transform(moving: np.ndarray, field: Tensor) -> Tensor:
    """Warp a constant (C, D, H, W) image by a recorded (3, D, H, W) field."""
    if field.ndim != 4 or field.shape[0] != 3:
        raise ArgumentError(f"field must be (3, D, H, W), got {field.shape}")
    moving = np.asarray(moving, dtype=field.dtype)
    px, py, pz = sample_points(field.data)
    vals, grads = [], []
    for c in range(moving.shape[0]):
        v, g = sample_grid(moving[c], px, py, pz, with_grad=True)
        vals.append(v)
        grads.append(g)
    out = np.stack(vals).astype(field.dtype)

    def back(g):
        gf = np.zeros(field.shape, dtype=field.dtype)
        for c, (gx, gy, gz) in enumerate(grads):
            gf[0] += g[c] * gx
            gf[1] += g[c] * gy
            gf[2] += g[c] * gz
        return (gf,)

    return make_node(out, (field,), back)


def smoothness(field: Tensor, normalize: bool = True) -> Tensor:
    """Squared forward-difference energy of a field, averaged per voxel when ``normalize``."""
    energy, grad = smoothness_energy_array(field.data)
    scale = 1.0 / np.prod(field.shape[1:]) if normalize else 1.0
    out = np.asarray(energy * scale, dtype=field.dtype)
    return make_node(out, (field,), lambda g: (g * grad * scale,))
