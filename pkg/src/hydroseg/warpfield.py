"""Dense displacement fields, the spatial transformer, and the smoothness energy.

A field stores one (ux, uy, uz) vector per fixed-grid voxel in voxel units;
warping samples the moving image at ``x + u(x)`` (backward warping).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .volcore import LabelMap, Volume3, sample_grid, voxel_grid


@dataclass(frozen=True, eq=False)
class DisplacementField:
    vectors: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vectors)
        dtype = np.float64 if vec.dtype == np.float64 else np.float32
        vec = np.array(vec, dtype=dtype, copy=True)
        if vec.ndim != 4 or vec.shape[0] != 3 or min(vec.shape) < 1:
            raise ArgumentError(f"field vectors must be (3, nz, ny, nx), got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ArgumentError("displacement field contains non-finite components")
        vec.flags.writeable = False
        object.__setattr__(self, "vectors", vec)

    @property
    def dims(self) -> tuple:
        nz, ny, nx = self.vectors.shape[1:]
        return (nx, ny, nz)

    def to_volume(self) -> Volume3:
        return Volume3(self.vectors)

    @classmethod
    def from_volume(cls, vol: Volume3) -> "DisplacementField":
        if vol.channels != 3:
            raise ArgumentError(f"a field volume needs 3 channels, got {vol.channels}")
        return cls(vol.data)

    def magnitude(self) -> np.ndarray:
        return np.sqrt((self.vectors.astype(np.float64) ** 2).sum(axis=0))

    def __eq__(self, other):
        if not isinstance(other, DisplacementField):
            return NotImplemented
        return np.array_equal(self.vectors, other.vectors)

    __hash__ = None


def identity_field(dims, dtype=np.float32) -> DisplacementField:
    nx, ny, nz = (int(d) for d in dims)
    if min(nx, ny, nz) < 1:
        raise ArgumentError(f"field dims must be >= 1, got {dims}")
    return DisplacementField(np.zeros((3, nz, ny, nx), dtype=dtype))


def sample_points(vectors: np.ndarray):
    """Absolute sampling coordinates x + u(x) for a raw (3, nz, ny, nx) array."""
    nz, ny, nx = vectors.shape[1:]
    x, y, z = voxel_grid((nx, ny, nz))
    return x + vectors[0], y + vectors[1], z + vectors[2]


def warp_array(moving: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Warp a (C, nz, ny, nx) array by raw field vectors onto the field's grid."""
    px, py, pz = sample_points(vectors)
    return np.stack([sample_grid(moving[c], px, py, pz) for c in range(moving.shape[0])])


def warp_volume(m: Volume3, phi: DisplacementField) -> Volume3:
    return Volume3(warp_array(m.data, phi.vectors), m.spacing)


def warp_label_array(labels: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    nz, ny, nx = labels.shape
    px, py, pz = sample_points(vectors)
    ix = np.clip(np.floor(px + 0.5), 0, nx - 1).astype(np.intp)
    iy = np.clip(np.floor(py + 0.5), 0, ny - 1).astype(np.intp)
    iz = np.clip(np.floor(pz + 0.5), 0, nz - 1).astype(np.intp)
    return labels[iz, iy, ix]


def warp_labels(labels: LabelMap, phi: DisplacementField) -> LabelMap:
    return LabelMap(warp_label_array(labels.labels, phi.vectors), labels.spacing)


def smoothness_energy_array(vectors: np.ndarray):
    """Sum of squared forward differences of every component along x, y, z.

    Returns ``(energy, gradient)`` with the gradient shaped like ``vectors``.
    """
    grad = np.zeros_like(vectors)
    energy = 0.0
    for axis in (1, 2, 3):
        if vectors.shape[axis] < 2:
            continue
        d = np.diff(vectors, axis=axis)
        energy += float(np.sum(d.astype(np.float64) ** 2))
        hi = [slice(None)] * 4
        lo = [slice(None)] * 4
        hi[axis] = slice(1, None)
        lo[axis] = slice(None, -1)
        grad[tuple(hi)] += 2 * d
        grad[tuple(lo)] -= 2 * d
    return energy, grad


def smoothness_energy(phi: DisplacementField):
    energy, grad = smoothness_energy_array(phi.vectors)
    return energy, DisplacementField(grad)


def compose(outer: DisplacementField, inner: DisplacementField) -> DisplacementField:
    """Field of ``x -> x + inner(x) + outer(x + inner(x))``."""
    if outer.dims != inner.dims:
        raise ArgumentError(f"cannot compose fields with dims {outer.dims} and {inner.dims}")
    dtype = np.result_type(outer.vectors.dtype, inner.vectors.dtype)
    return DisplacementField(inner.vectors.astype(dtype) + warp_array(outer.vectors.astype(dtype), inner.vectors))


def resize_field(phi: DisplacementField, dims) -> DisplacementField:
    """Trilinearly resample a field onto ``dims``, rescaling each component by the size ratio."""
    nx, ny, nz = (int(d) for d in dims)
    old = phi.dims
    if (nx, ny, nz) == old:
        return phi
    axes = [(np.arange(n, dtype=np.float64) + 0.5) * (o / n) - 0.5 for n, o in zip((nx, ny, nz), old)]
    z, y, x = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    out = np.stack([
        sample_grid(phi.vectors[c], x, y, z) * (new / o)
        for c, (new, o) in enumerate(zip((nx, ny, nz), old))
    ])
    return DisplacementField(out.astype(phi.vectors.dtype))
