"""Volumes, label maps, the trilinear kernel, preprocessing and file I/O.

Arrays are stored channel-major with x fastest, i.e. numpy shape
``(channels, nz, ny, nx)`` for volumes and ``(nz, ny, nx)`` for labels.
Continuous points are always given in ``(x, y, z)`` voxel coordinates.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DegenerateInputError, FormatError

N_ROIS = 17
N_LABELS = N_ROIS + 1


class RoiId(enum.IntEnum):
    IR = 1
    IL = 2
    TR = 3
    TL = 4
    ICRA = 5
    ICRP = 6
    ICLA = 7
    ICLP = 8
    CRA = 9
    CRP = 10
    CLA = 11
    CLP = 12
    MCR = 13
    MCL = 14
    IPL = 15
    IPR = 16
    B = 17

    @property
    def partner(self) -> "RoiId":
        """Contralateral ROI; the brainstem is its own partner."""
        return RoiId(int(_SWAP_LUT[self.value]))

    @classmethod
    def from_name(cls, name: str) -> "RoiId":
        try:
            return cls[name]
        except KeyError:
            raise ArgumentError(f"unknown ROI name {name!r}") from None


LATERAL_PAIRS = (
    (RoiId.IR, RoiId.IL),
    (RoiId.TR, RoiId.TL),
    (RoiId.ICRA, RoiId.ICLA),
    (RoiId.ICRP, RoiId.ICLP),
    (RoiId.CRA, RoiId.CLA),
    (RoiId.CRP, RoiId.CLP),
    (RoiId.MCR, RoiId.MCL),
    (RoiId.IPR, RoiId.IPL),
)

_SWAP_LUT = np.arange(N_LABELS, dtype=np.uint8)
for _r, _l in LATERAL_PAIRS:
    _SWAP_LUT[_r.value], _SWAP_LUT[_l.value] = _l.value, _r.value


def swap_lut() -> np.ndarray:
    """Label lookup table exchanging every lateral pair (background and B fixed)."""
    return _SWAP_LUT.copy()


def _as_triple(values, name, cast=float):
    values = tuple(cast(v) for v in values)
    if len(values) != 3:
        raise ArgumentError(f"{name} must have 3 components, got {len(values)}")
    return values


@dataclass(frozen=True, eq=False)
class Volume3:
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, copy=True)
        if data.ndim == 3:
            data = data[None]
        if data.ndim != 4 or data.shape[0] < 1 or min(data.shape) < 1:
            raise ArgumentError(f"volume data must be (channels, nz, ny, nx), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ArgumentError("volume contains non-finite samples")
        spacing = _as_triple(self.spacing, "spacing")
        if min(spacing) <= 0:
            raise ArgumentError(f"spacing must be strictly positive, got {spacing}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple:
        nz, ny, nx = self.data.shape[1:]
        return (nx, ny, nz)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    def channel(self, c: int) -> "Volume3":
        return Volume3(self.data[c:c + 1], self.spacing)

    def __eq__(self, other):
        if not isinstance(other, Volume3):
            return NotImplemented
        return self.spacing == other.spacing and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LabelMap:
    labels: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        raw = np.asarray(self.labels)
        if raw.ndim != 3 or min(raw.shape) < 1:
            raise ArgumentError(f"label data must be (nz, ny, nx), got shape {raw.shape}")
        if raw.size and (raw.min() < 0 or raw.max() > N_ROIS):
            raise ArgumentError(f"label values must lie in 0..{N_ROIS}")
        labels = np.array(raw, dtype=np.uint8, copy=True)
        labels.flags.writeable = False
        spacing = _as_triple(self.spacing, "spacing")
        if min(spacing) <= 0:
            raise ArgumentError(f"spacing must be strictly positive, got {spacing}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple:
        nz, ny, nx = self.labels.shape
        return (nx, ny, nz)

    def codes(self) -> set:
        return {int(v) for v in np.unique(self.labels)}

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return self.spacing == other.spacing and np.array_equal(self.labels, other.labels)

    __hash__ = None


def check_same_dims(*items):
    dims = {item.dims for item in items}
    if len(dims) > 1:
        raise ArgumentError(f"dimension mismatch: {sorted(dims)}")


# --------------------------------------------------------------------------
# interpolation


def sample_grid(arr: np.ndarray, x, y, z, with_grad: bool = False):
    """Trilinear interpolation of a (nz, ny, nx) array at continuous points.

    Points outside the grid are clamped to the border. With ``with_grad``
    the analytic derivative of the interpolant with respect to x, y and z is
    returned too; it is zero along an axis where the point was clamped.
    """
    nz, ny, nx = arr.shape
    out_dtype = np.result_type(arr.dtype, np.float32)
    arr = arr.astype(out_dtype, copy=False)

    def split(p, n):
        p = np.asarray(p, dtype=np.float64)
        inside = (p > 0) & (p < n - 1)
        pc = np.clip(p, 0, n - 1)
        i0 = np.floor(pc).astype(np.intp)
        frac = pc - i0
        i1 = np.minimum(i0 + 1, n - 1)
        return i0, i1, frac.astype(out_dtype), inside

    x0, x1, fx, inx = split(x, nx)
    y0, y1, fy, iny = split(y, ny)
    z0, z1, fz, inz = split(z, nz)

    c000 = arr[z0, y0, x0]
    c001 = arr[z0, y0, x1]
    c010 = arr[z0, y1, x0]
    c011 = arr[z0, y1, x1]
    c100 = arr[z1, y0, x0]
    c101 = arr[z1, y0, x1]
    c110 = arr[z1, y1, x0]
    c111 = arr[z1, y1, x1]

    # lerp as a + f * (b - a): exact at grid points and on constant data
    c00 = c000 + fx * (c001 - c000)
    c01 = c010 + fx * (c011 - c010)
    c10 = c100 + fx * (c101 - c100)
    c11 = c110 + fx * (c111 - c110)
    c0 = c00 + fy * (c01 - c00)
    c1 = c10 + fy * (c11 - c10)
    val = c0 + fz * (c1 - c0)
    if not with_grad:
        return val

    gx0 = (1 - fy) * (c001 - c000) + fy * (c011 - c010)
    gx1 = (1 - fy) * (c101 - c100) + fy * (c111 - c110)
    gx = ((1 - fz) * gx0 + fz * gx1) * inx
    gy = ((1 - fz) * (c01 - c00) + fz * (c11 - c10)) * iny
    gz = (c1 - c0) * inz
    return val, (gx, gy, gz)


def trilinear_sample(vol: Volume3, channel: int, point) -> float:
    x, y, z = _as_triple(point, "point")
    return float(sample_grid(vol.data[channel], x, y, z))


def voxel_grid(dims, dtype=np.float64):
    """Coordinate arrays (x, y, z), each shaped (nz, ny, nx)."""
    nx, ny, nz = dims
    z, y, x = np.meshgrid(
        np.arange(nz, dtype=dtype), np.arange(ny, dtype=dtype), np.arange(nx, dtype=dtype), indexing="ij"
    )
    return x, y, z


# --------------------------------------------------------------------------
# preprocessing


def resample_isotropic(vol: Volume3, target: float) -> Volume3:
    """Resample onto an isotropic grid of ``target`` mm voxels.

    Voxel centers sit at ``(i + 0.5) * spacing`` so the physical extent is
    preserved; new extents are ``round(n * spacing / target)`` floored at 1.
    """
    if not target > 0:
        raise ArgumentError(f"target spacing must be positive, got {target}")
    target = float(target)
    if vol.spacing == (target, target, target):
        return vol
    new_dims = tuple(max(1, int(round(n * s / target))) for n, s in zip(vol.dims, vol.spacing))
    axes = []
    for n_new, s in zip(new_dims, vol.spacing):
        axes.append((np.arange(n_new, dtype=np.float64) + 0.5) * (target / s) - 0.5)
    z, y, x = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    out = np.stack([sample_grid(vol.data[c], x, y, z) for c in range(vol.channels)])
    return Volume3(out, (target, target, target))


def normalize_max(vol: Volume3) -> Volume3:
    maxima = vol.data.reshape(vol.channels, -1).max(axis=1)
    for c, m in enumerate(maxima):
        if not m > 0:
            raise DegenerateInputError(f"channel {c} has maximum {m}; cannot normalize by it")
    out = vol.data / maxima[:, None, None, None]
    return Volume3(out, vol.spacing)


_AXIS_NAMES = {"x": 0, "y": 1, "z": 2}


def _parse_axes(axes):
    parsed = set()
    for a in axes:
        if isinstance(a, str):
            if a not in _AXIS_NAMES:
                raise ArgumentError(f"unknown axis {a!r}")
            parsed.add(_AXIS_NAMES[a])
        elif a in (0, 1, 2):
            parsed.add(int(a))
        else:
            raise ArgumentError(f"unknown axis {a!r}")
    return parsed


def flip_array(arr: np.ndarray, axes) -> np.ndarray:
    """Mirror the trailing (z, y, x) axes of ``arr`` along the given spatial axes."""
    axes = _parse_axes(axes)
    if not axes:
        return arr
    np_axes = tuple(arr.ndim - 1 - a for a in sorted(axes))
    return np.flip(arr, axis=np_axes)


def flip_augment(vol: Volume3, labels: LabelMap, axes) -> tuple:
    """Mirror a volume and its labels; x flips also exchange left/right ROI codes."""
    check_same_dims(vol, labels)
    axes = _parse_axes(axes)
    out_vol = flip_array(vol.data, axes)
    out_lab = flip_array(labels.labels, axes)
    if 0 in axes:
        out_lab = _SWAP_LUT[out_lab]
    return Volume3(out_vol, vol.spacing), LabelMap(out_lab, labels.spacing)


# --------------------------------------------------------------------------
# MVOL container

MVOL_MAGIC = b"MVOL"
MVOL_VERSION = 1
_MVOL_HEADER = struct.Struct("<4sIBBI3I3f")
KIND_VOLUME, KIND_LABELS = 0, 1
DTYPE_F32, DTYPE_U8 = 0, 1
_DTYPES = {DTYPE_F32: np.dtype("<f4"), DTYPE_U8: np.dtype("u1")}


def write_mvol(item, path) -> None:
    if isinstance(item, Volume3):
        kind, dtype, payload, channels = KIND_VOLUME, DTYPE_F32, item.data.astype("<f4"), item.channels
    elif isinstance(item, LabelMap):
        kind, dtype, payload, channels = KIND_LABELS, DTYPE_U8, item.labels, 1
    else:
        raise ArgumentError(f"cannot write {type(item).__name__} as MVOL")
    header = _MVOL_HEADER.pack(MVOL_MAGIC, MVOL_VERSION, kind, dtype, channels, *item.dims, *item.spacing)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(payload).tobytes())


def read_mvol(path):
    raw = Path(path).read_bytes()
    if len(raw) < _MVOL_HEADER.size:
        raise FormatError(f"file too short for MVOL header ({len(raw)} < {_MVOL_HEADER.size} bytes)", len(raw))
    magic, version, kind, dtype, channels, nx, ny, nz, sx, sy, sz = _MVOL_HEADER.unpack_from(raw)
    if magic != MVOL_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MVOL_MAGIC!r}", 0)
    if version != MVOL_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if kind not in (KIND_VOLUME, KIND_LABELS):
        raise FormatError(f"unknown kind code {kind}", 8)
    if dtype not in _DTYPES:
        raise FormatError(f"unknown dtype code {dtype}", 9)
    if kind == KIND_LABELS and (dtype != DTYPE_U8 or channels != 1):
        raise FormatError("label maps must be single-channel u8", 9)
    if channels < 1 or min(nx, ny, nz) < 1:
        raise FormatError(f"invalid shape channels={channels} dims={(nx, ny, nz)}", 10)
    np_dtype = _DTYPES[dtype]
    expected = channels * nx * ny * nz * np_dtype.itemsize
    actual = len(raw) - _MVOL_HEADER.size
    if actual != expected:
        raise FormatError(f"payload is {actual} bytes, dims imply {expected}", _MVOL_HEADER.size + min(actual, expected))
    data = np.frombuffer(raw, dtype=np_dtype, offset=_MVOL_HEADER.size).reshape(channels, nz, ny, nx)
    spacing = (sx, sy, sz)
    try:
        if kind == KIND_LABELS:
            return LabelMap(data[0], spacing)
        return Volume3(data, spacing)
    except ArgumentError as exc:
        raise FormatError(str(exc), _MVOL_HEADER.size) from exc


# --------------------------------------------------------------------------
# NIfTI-1 import

_NIFTI_DTYPES = {2: np.dtype("u1"), 4: np.dtype("i2"), 16: np.dtype("f4")}


def import_nifti(path) -> Volume3:
    """Read an uncompressed single-file NIfTI-1 image (uint8, int16 or float32)."""
    raw = Path(path).read_bytes()
    if len(raw) < 348:
        raise FormatError(f"file too short for a NIfTI-1 header ({len(raw)} bytes)", len(raw))
    if raw[344:348] != b"n+1\x00":
        raise FormatError(f"bad magic {raw[344:348]!r}, expected b'n+1\\x00'", 344)
    if struct.unpack_from("<i", raw, 0)[0] == 348:
        end = "<"
    elif struct.unpack_from(">i", raw, 0)[0] == 348:
        end = ">"
    else:
        raise FormatError("sizeof_hdr is not 348", 0)
    dim = struct.unpack_from(end + "8h", raw, 40)
    datatype = struct.unpack_from(end + "h", raw, 70)[0]
    pixdim = struct.unpack_from(end + "8f", raw, 76)
    vox_offset = struct.unpack_from(end + "f", raw, 108)[0]
    slope, inter = struct.unpack_from(end + "2f", raw, 112)

    if dim[0] not in (3, 4):
        raise FormatError(f"dim[0] = {dim[0]}; only 3D or 4D images are supported", 40)
    if datatype not in _NIFTI_DTYPES:
        raise FormatError(f"unsupported datatype code {datatype}", 70)
    nx, ny, nz = dim[1:4]
    channels = dim[4] if dim[0] == 4 else 1
    if min(nx, ny, nz, channels) < 1:
        raise FormatError(f"invalid dims {dim[1:5]}", 42)
    spacing = tuple(abs(float(p)) for p in pixdim[1:4])
    if min(spacing) <= 0:
        raise FormatError(f"pixdim {pixdim[1:4]} has a zero spacing", 80)
    offset = int(vox_offset) if vox_offset >= 348 else 352
    np_dtype = _NIFTI_DTYPES[datatype].newbyteorder(end)
    count = channels * nx * ny * nz
    expected = count * np_dtype.itemsize
    if len(raw) - offset < expected:
        raise FormatError(f"payload is {len(raw) - offset} bytes, dims imply {expected}", offset)
    data = np.frombuffer(raw, dtype=np_dtype, count=count, offset=offset).astype(np.float64)
    if slope != 0:
        data = data * slope + inter
    return Volume3(data.reshape(channels, nz, ny, nx), spacing)
