"""Hard attention: atlas label propagation and majority-vote fusion into prior channels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .register import RegConfig, register
from .volcore import N_LABELS, N_ROIS, LabelMap, Volume3, check_same_dims, swap_lut
from .warpfield import warp_labels

REG_CHANNEL = 0  # T1


@dataclass
class AtlasSet:
    entries: list

    def __post_init__(self):
        if not self.entries:
            raise ArgumentError("an atlas set needs at least one (image, labels) entry")
        for image, labels in self.entries:
            check_same_dims(image, labels)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass(frozen=True, eq=False)
class AtlasPrior:
    """Per-voxel vote fractions over background + 17 ROIs, shape (18, nz, ny, nx)."""

    fractions: np.ndarray

    def __post_init__(self):
        arr = np.array(self.fractions, dtype=np.float32, copy=True)
        if arr.ndim != 4 or arr.shape[0] != N_LABELS:
            raise ArgumentError(f"prior must have shape ({N_LABELS}, nz, ny, nx), got {arr.shape}")
        if arr.min() < 0 or np.max(np.abs(arr.sum(axis=0) - 1)) > 1e-6:
            raise ArgumentError("prior channels must form a simplex per voxel")
        arr.flags.writeable = False
        object.__setattr__(self, "fractions", arr)

    @property
    def dims(self):
        nz, ny, nx = self.fractions.shape[1:]
        return (nx, ny, nz)

    def to_volume(self) -> Volume3:
        return Volume3(self.fractions)

    @classmethod
    def from_volume(cls, vol: Volume3) -> "AtlasPrior":
        return cls(vol.data)


def propagate(atlas_entry, query_image: Volume3, reg: RegConfig | None = None) -> LabelMap:
    """Register the atlas image onto the query and carry its labels across."""
    image, labels = atlas_entry
    check_same_dims(image, labels, query_image)
    phi = register(query_image.channel(REG_CHANNEL), image.channel(REG_CHANNEL), reg or RegConfig())
    return warp_labels(labels, phi)


def vote_counts(props) -> np.ndarray:
    props = list(props)
    if not props:
        raise ArgumentError("fusion needs at least one propagated label map")
    check_same_dims(*props)
    counts = np.zeros((N_LABELS,) + props[0].labels.shape, dtype=np.int32)
    for p in props:
        for code in range(N_LABELS):
            counts[code] += p.labels == code
    return counts


def fuse_majority(props):
    """Consensus label (ties to the lowest code) and vote-fraction prior."""
    counts = vote_counts(props)
    k = len(props)
    consensus = LabelMap(counts.argmax(axis=0).astype(np.uint8), props[0].spacing)
    fractions = counts / np.float64(k)
    return consensus, AtlasPrior(fractions)


def build_network_input(modalities: Volume3, prior: AtlasPrior | None, use_hard: bool) -> Volume3:
    if not use_hard:
        return modalities
    if prior is None:
        raise ArgumentError("hard attention requested but no atlas prior given")
    if prior.dims != modalities.dims:
        raise ArgumentError(f"dimension mismatch: modalities {modalities.dims}, prior {prior.dims}")
    return Volume3(np.concatenate([modalities.data, prior.fractions]), modalities.spacing)


def flip_prior_channels(fractions: np.ndarray) -> np.ndarray:
    """Reorder prior channels so they stay aligned with labels after a left-right flip."""
    return fractions[swap_lut()]


def hard_attention(atlases: AtlasSet, query_image: Volume3, reg: RegConfig | None = None):
    """Propagate every atlas onto the query and fuse; returns (consensus, prior)."""
    return fuse_majority([propagate(entry, query_image, reg) for entry in atlases])
