"""Synthetic hydrocephalus phantoms with known ground-truth deformations.

A fixed, left-right symmetric base layout holds the 17 ROIs around a
central CSF cavity. Each subject warps the base by a random smooth field
plus a radial push-out that enlarges the ventricle.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DegenerateInputError
from .volcore import (LabelMap, N_ROIS, RoiId, Volume3, read_mvol, sample_grid, swap_lut, voxel_grid, write_mvol)
from .warpfield import DisplacementField, warp_array, warp_label_array

MIN_DIMS = 24
MAX_RETRIES = 5

# (center, radii) in normalized coordinates: each axis spans [-1, 1] across
# the grid; x < 0 is the right hemisphere, y < 0 anterior, z > 0 superior.
BRAIN = ((0.0, 0.0, 0.0), (0.9, 0.92, 0.85))
VENTRICLE = ((0.0, 0.0, 0.05), (0.15, 0.25, 0.15))
RIGHT_ROIS = {
    RoiId.TR: ((-0.33, 0.02, 0.0), (0.14, 0.2, 0.16)),
    RoiId.ICRA: ((-0.38, -0.38, 0.1), (0.11, 0.14, 0.16)),
    RoiId.ICRP: ((-0.56, 0.16, 0.0), (0.1, 0.17, 0.16)),
    RoiId.IR: ((-0.76, -0.06, 0.0), (0.09, 0.3, 0.2)),
    RoiId.CRA: ((-0.12, -0.45, 0.45), (0.1, 0.2, 0.13)),
    RoiId.CRP: ((-0.12, 0.32, 0.5), (0.1, 0.2, 0.13)),
    RoiId.MCR: ((-0.16, -0.76, 0.15), (0.11, 0.11, 0.2)),
    RoiId.IPR: ((-0.55, 0.5, 0.35), (0.14, 0.16, 0.15)),
}
BRAINSTEM = ((0.0, 0.22, -0.56), (0.17, 0.17, 0.3))

# (T1, FA, ADC) per tissue; lateral partners share intensities
TISSUE = (0.55, 0.3, 0.35)
CSF = (0.12, 0.05, 0.95)
ROI_INTENSITY = {
    RoiId.IR: (0.7, 0.2, 0.4),
    RoiId.TR: (0.8, 0.45, 0.3),
    RoiId.ICRA: (0.95, 0.85, 0.25),
    RoiId.ICRP: (0.9, 0.95, 0.2),
    RoiId.CRA: (0.65, 0.55, 0.45),
    RoiId.CRP: (0.75, 0.6, 0.5),
    RoiId.MCR: (0.6, 0.15, 0.55),
    RoiId.IPR: (0.85, 0.35, 0.6),
    RoiId.B: (1.0, 0.7, 0.3),
}
for _roi in list(ROI_INTENSITY):
    ROI_INTENSITY[_roi.partner] = ROI_INTENSITY[_roi]


@dataclass
class PhantomConfig:
    dims: tuple = (32, 32, 32)
    ventricle_scale: tuple = (1.0, 2.5)
    deform_amplitude: tuple = (0.0, 3.0)
    deform_grid: int = 4
    noise_sigma: float = 0.02
    n_subjects: int = 21
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.ventricle_scale = _as_range(self.ventricle_scale, "ventricle_scale")
        self.deform_amplitude = _as_range(self.deform_amplitude, "deform_amplitude")
        if len(self.dims) != 3:
            raise ArgumentError(f"dims must have 3 entries, got {self.dims}")
        if self.ventricle_scale[0] < 1:
            raise ArgumentError(f"ventricle_scale must be >= 1, got {self.ventricle_scale}")
        if self.deform_amplitude[0] < 0:
            raise ArgumentError(f"deform_amplitude must be >= 0, got {self.deform_amplitude}")
        if self.deform_grid < 2:
            raise ArgumentError(f"deform_grid must be >= 2, got {self.deform_grid}")
        if self.noise_sigma < 0:
            raise ArgumentError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def _as_range(value, name):
    if np.isscalar(value):
        value = (value, value)
    lo, hi = (float(v) for v in value)
    if hi < lo:
        raise ArgumentError(f"{name} range is empty: {lo} > {hi}")
    return (lo, hi)


@dataclass
class Subject:
    index: int
    seed: int
    image: Volume3
    labels: LabelMap
    field: DisplacementField
    ventricle_scale: float = 1.0
    amplitude: float = 0.0

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.image.data.tobytes())
        h.update(self.labels.labels.tobytes())
        h.update(np.ascontiguousarray(self.field.vectors, dtype=np.float32).tobytes())
        return h.hexdigest()[:16]


def _normalized_grid(dims):
    x, y, z = voxel_grid(dims)
    nx, ny, nz = dims
    return (
        (x - (nx - 1) / 2) / (nx / 2),
        (y - (ny - 1) / 2) / (ny / 2),
        (z - (nz - 1) / 2) / (nz / 2),
    )


def _inside(grid, shape):
    (cx, cy, cz), (rx, ry, rz) = shape
    u, v, w = grid
    return ((u - cx) / rx) ** 2 + ((v - cy) / ry) ** 2 + ((w - cz) / rz) ** 2 <= 1.0


def ventricle_geometry(dims):
    """Ventricle centroid (x, y, z) in voxels and its mean radius in voxels."""
    (cx, cy, cz), radii = VENTRICLE
    center = tuple((c * n / 2) + (n - 1) / 2 for c, n in zip((cx, cy, cz), dims))
    radius = float(np.cbrt(np.prod([r * n / 2 for r, n in zip(radii, dims)])))
    return center, radius


def make_base_atlas(dims=(32, 32, 32)):
    """Deterministic 3-channel base image and its 17-ROI label map."""
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < MIN_DIMS:
        raise ArgumentError(f"dims {dims} too small to place all ROIs (need >= {MIN_DIMS} per axis)")
    nx, ny, nz = dims
    grid = _normalized_grid(dims)
    brain = _inside(grid, BRAIN)
    cavity = _inside(grid, VENTRICLE)
    free = brain & ~cavity
    right_half = grid[0] < 0

    labels = np.zeros((nz, ny, nx), dtype=np.uint8)
    for roi, shape in RIGHT_ROIS.items():
        labels[_inside(grid, shape) & free & right_half & (labels == 0)] = roi.value
    labels[_inside(grid, BRAINSTEM) & free & (labels == 0)] = RoiId.B.value
    # mirror the right hemisphere onto the left, exchanging lateral codes
    mirrored = swap_lut()[labels[:, :, ::-1]]
    left = ~right_half & (grid[0] != 0)
    labels[left] = mirrored[left]

    image = np.zeros((3, nz, ny, nx), dtype=np.float64)
    for c in range(3):
        image[c][brain] = TISSUE[c]
        image[c][cavity] = CSF[c]
    for roi in RoiId:
        mask = labels == roi.value
        for c in range(3):
            image[c][mask] = ROI_INTENSITY[roi][c]
    _, v, w = grid
    bias = 1.0 + 0.05 * np.cos(np.pi * v / 2) * np.cos(np.pi * w / 2)
    image *= bias[None]

    present = set(np.unique(labels)) - {0}
    if len(present) != N_ROIS:
        raise ArgumentError(f"dims {dims} lose ROIs {sorted(set(range(1, N_ROIS + 1)) - present)}")
    return Volume3(image), LabelMap(labels)


def smooth_random_field(dims, amplitude, grid_size, rng) -> np.ndarray:
    """Uniform random control-point displacements, trilinearly upsampled (corner aligned)."""
    nx, ny, nz = dims
    ctrl = rng.uniform(-amplitude, amplitude, size=(3, grid_size, grid_size, grid_size))
    x, y, z = voxel_grid(dims)
    gx = x * (grid_size - 1) / max(nx - 1, 1)
    gy = y * (grid_size - 1) / max(ny - 1, 1)
    gz = z * (grid_size - 1) / max(nz - 1, 1)
    return np.stack([sample_grid(ctrl[c], gx, gy, gz) for c in range(3)]).astype(np.float64)


def ventricle_dilation_field(dims, scale) -> np.ndarray:
    """Radial field that enlarges the ventricle by ``scale``.

    Inside the dilated radius the subject samples the base at ``c + (x - c) / scale``;
    the pull fades linearly to zero at twice the dilated radius.
    """
    nx, ny, nz = dims
    if scale == 1.0:
        return np.zeros((3, nz, ny, nx))
    (cx, cy, cz), radius = ventricle_geometry(dims)
    x, y, z = voxel_grid(dims)
    dx, dy, dz = x - cx, y - cy, z - cz
    r = np.sqrt(dx ** 2 + dy ** 2 + dz ** 2)
    outer = scale * radius
    weight = np.clip((2 * outer - r) / outer, 0.0, 1.0)
    k = -(1.0 - 1.0 / scale) * weight
    return np.stack([k * dx, k * dy, k * dz])


def _synthesize(base, cfg: PhantomConfig, rng):
    image, labels = base
    dims = image.dims
    amplitude = float(rng.uniform(*cfg.deform_amplitude))
    scale = float(rng.uniform(*cfg.ventricle_scale))
    vectors = ventricle_dilation_field(dims, scale)
    if amplitude > 0:
        vectors = vectors + smooth_random_field(dims, amplitude, cfg.deform_grid, rng)
    clean = warp_array(image.data, vectors)
    lab = warp_label_array(labels.labels, vectors)
    noisy = clean
    if cfg.noise_sigma > 0:
        span = np.ptp(image.data.reshape(image.channels, -1), axis=1)
        noise = rng.standard_normal(clean.shape) * (cfg.noise_sigma * span)[:, None, None, None]
        noisy = clean + noise.astype(np.float32)
    return Volume3(noisy, image.spacing), LabelMap(lab, labels.spacing), DisplacementField(vectors), scale, amplitude


def synthesize_subject(base, cfg: PhantomConfig, subject_seed: int):
    """Deform, relabel and add noise to the base; returns (image, labels, ground-truth field)."""
    image, labels, phi, _, _ = _synthesize(base, cfg, np.random.default_rng(subject_seed))
    return image, labels, phi


def make_subject(base, cfg: PhantomConfig, index: int) -> Subject:
    seed = cfg.seed + index
    for attempt in range(MAX_RETRIES + 1):
        rng = np.random.default_rng(seed if attempt == 0 else [seed, attempt])
        image, labels, phi, scale, amplitude = _synthesize(base, cfg, rng)
        if len(labels.codes() - {0}) == N_ROIS:
            return Subject(index, seed, image, labels, phi, scale, amplitude)
    raise DegenerateInputError(f"subject {index} lost ROIs after {MAX_RETRIES} regenerations")


def make_dataset(cfg: PhantomConfig) -> list:
    if cfg.n_subjects < 1:
        raise ArgumentError(f"n_subjects must be >= 1, got {cfg.n_subjects}")
    base = make_base_atlas(cfg.dims)
    return [make_subject(base, cfg, i) for i in range(cfg.n_subjects)]


# --------------------------------------------------------------------------
# dataset directory

MANIFEST = "manifest.txt"


def subject_paths(directory, index):
    d = Path(directory)
    return d / f"subj_{index}_img.mvol", d / f"subj_{index}_lab.mvol", d / f"subj_{index}_gtfield.mvol"


def write_dataset(subjects, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = ["# index seed ventricle_scale amplitude hash"]
    for s in subjects:
        img_p, lab_p, fld_p = subject_paths(directory, s.index)
        write_mvol(s.image, img_p)
        write_mvol(s.labels, lab_p)
        write_mvol(s.field.to_volume(), fld_p)
        lines.append(f"{s.index} {s.seed} {s.ventricle_scale:.6f} {s.amplitude:.6f} {s.content_hash()}")
    path = directory / MANIFEST
    path.write_text("\n".join(lines) + "\n")
    return path


def load_dataset(directory) -> list:
    directory = Path(directory)
    manifest = directory / MANIFEST
    if not manifest.exists():
        raise ArgumentError(f"no {MANIFEST} in {directory}")
    subjects = []
    for line in manifest.read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        idx, seed, scale, amp, _ = line.split()
        img_p, lab_p, fld_p = subject_paths(directory, int(idx))
        phi = DisplacementField.from_volume(read_mvol(fld_p))
        subjects.append(Subject(int(idx), int(seed), read_mvol(img_p), read_mvol(lab_p), phi, float(scale), float(amp)))
    return subjects
