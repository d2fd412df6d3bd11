import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hydroseg.errors import ArgumentError, DegenerateInputError, FormatError
from hydroseg.volcore import (
    LATERAL_PAIRS, N_ROIS, LabelMap, RoiId, Volume3, flip_augment, import_nifti, normalize_max, read_mvol,
    resample_isotropic, sample_grid, swap_lut, trilinear_sample, write_mvol,
)


def test_roi_codes_bijective():
    assert [r.value for r in RoiId] == list(range(1, N_ROIS + 1))
    assert RoiId.from_name("IPR") is RoiId.IPR
    assert RoiId.IR.partner is RoiId.IL and RoiId.B.partner is RoiId.B
    for r, l in LATERAL_PAIRS:
        assert r.partner is l and l.partner is r
    with pytest.raises(ArgumentError):
        RoiId.from_name("XX")


def test_volume_validation():
    with pytest.raises(ArgumentError):
        Volume3(np.zeros((2, 2)))
    with pytest.raises(ArgumentError):
        Volume3(np.full((1, 2, 2, 2), np.nan))
    with pytest.raises(ArgumentError):
        Volume3(np.zeros((2, 2, 2)), spacing=(1, 0, 1))
    with pytest.raises(ArgumentError):
        LabelMap(np.full((2, 2, 2), 18))
    v = Volume3(np.zeros((3, 4, 5)))
    assert v.dims == (5, 4, 3) and v.channels == 1
    assert not v.data.flags.writeable


def test_resample_identity_is_bit_equal(rng):
    v = Volume3(rng.normal(size=(2, 3, 4, 5)))
    out = resample_isotropic(v, 1.0)
    assert out.dims == v.dims and np.array_equal(out.data, v.data)


def test_resample_hand_trilinear():
    v = Volume3(np.array([0.0, 10.0]).reshape(1, 1, 1, 2), spacing=(2, 1, 1))
    out = resample_isotropic(v, 1.0)
    assert out.dims == (4, 1, 1) and out.spacing == (1.0, 1.0, 1.0)
    # output centres 0.5..3.5 mm map to source voxel coords -0.25, 0.25, 0.75, 1.25 (clamped at the ends)
    assert np.allclose(out.data.ravel(), [0.0, 2.5, 7.5, 10.0])


def test_resample_dims_round_and_floor():
    v = Volume3(np.ones((1, 3, 3, 3)), spacing=(0.2, 1.0, 1.7))
    out = resample_isotropic(v, 1.0)
    assert out.dims == (1, 3, 5)
    with pytest.raises(ArgumentError):
        resample_isotropic(v, 0)


def test_normalize_max():
    v = Volume3(np.array([50.0, 100.0, 200.0]).reshape(1, 1, 1, 3))
    assert np.allclose(normalize_max(v).data.ravel(), [0.25, 0.5, 1.0])
    two = Volume3(np.stack([np.full((2, 2, 2), 10.0), np.full((2, 2, 2), 4.0)]))
    assert np.allclose(normalize_max(two).data.reshape(2, -1).max(axis=1), 1.0)
    with pytest.raises(DegenerateInputError, match="channel 1"):
        normalize_max(Volume3(np.stack([np.ones((2, 2, 2)), np.zeros((2, 2, 2))])))


def test_trilinear_examples():
    data = np.arange(4 * 5 * 6, dtype=np.float32).reshape(4, 5, 6)
    v = Volume3(data)
    assert trilinear_sample(v, 0, (1, 2, 3)) == data[3, 2, 1]
    edge = Volume3(np.array([0.0, 8.0]).reshape(1, 1, 2))
    assert trilinear_sample(edge, 0, (0.5, 0, 0)) == 4.0
    assert trilinear_sample(v, 0, (-5, 0, 0)) == data[0, 0, 0]
    assert trilinear_sample(v, 0, (99, 99, 99)) == data[-1, -1, -1]


def _brute_trilinear(arr, x, y, z):
    nz, ny, nx = arr.shape
    x, y, z = np.clip(x, 0, nx - 1), np.clip(y, 0, ny - 1), np.clip(z, 0, nz - 1)
    total = 0.0
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                w = max(0, 1 - abs(x - i)) * max(0, 1 - abs(y - j)) * max(0, 1 - abs(z - k))
                total += w * arr[k, j, i]
    return total


@given(st.integers(0, 2**31), st.floats(-1, 5), st.floats(-1, 4), st.floats(-1, 3))
def test_trilinear_matches_tent_sum_and_is_bounded(seed, x, y, z):
    arr = np.random.default_rng(seed).normal(size=(3, 4, 5))
    val = float(sample_grid(arr, x, y, z))
    assert val == pytest.approx(_brute_trilinear(arr, x, y, z), abs=1e-9)
    i, j, k = (int(np.clip(np.floor(c), 0, n - 1)) for c, n in ((x, 5), (y, 4), (z, 3)))
    block = arr[k:k + 2, j:j + 2, i:i + 2]
    assert block.min() - 1e-12 <= val <= block.max() + 1e-12


def test_trilinear_gradient_matches_finite_differences(rng):
    arr = rng.normal(size=(4, 5, 6))
    x, y, z = rng.uniform(0.2, 3.8, 20), rng.uniform(0.2, 2.8, 20), rng.uniform(0.2, 1.8, 20)
    _, (gx, gy, gz) = sample_grid(arr, x, y, z, with_grad=True)
    h = 1e-6
    for g, d in ((gx, (h, 0, 0)), (gy, (0, h, 0)), (gz, (0, 0, h))):
        fd = (sample_grid(arr, x + d[0], y + d[1], z + d[2]) - sample_grid(arr, x - d[0], y - d[1], z - d[2])) / (2 * h)
        # points on a cell face have one-sided derivatives, skip them
        ok = np.all([np.abs(c - np.round(c)) > 1e-4 for c in (x, y, z)], axis=0)
        assert np.allclose(g[ok], fd[ok], atol=1e-6)


def test_flip_examples(rng):
    v = Volume3(rng.normal(size=(2, 3, 4, 5)))
    lab = LabelMap(rng.integers(0, 18, size=(3, 4, 5)))
    same_v, same_l = flip_augment(v, lab, set())
    assert same_v == v and same_l == lab
    only_ir = np.zeros((3, 4, 5), np.uint8)
    only_ir[1, 2, 0] = RoiId.IR
    _, out = flip_augment(Volume3(np.zeros((3, 4, 5))), LabelMap(only_ir), {"x"})
    assert out.codes() == {0, int(RoiId.IL)} and out.labels[1, 2, 4] == RoiId.IL
    with pytest.raises(ArgumentError):
        flip_augment(v, LabelMap(np.zeros((3, 4, 4))), {"x"})
    with pytest.raises(ArgumentError):
        flip_augment(v, lab, {"w"})


@given(st.integers(0, 2**31), st.sets(st.sampled_from("xyz")))
def test_flip_is_involution(seed, axes):
    r = np.random.default_rng(seed)
    v = Volume3(r.normal(size=(2, 3, 4, 5)))
    lab = LabelMap(r.integers(0, 18, size=(3, 4, 5)))
    v2, l2 = flip_augment(*flip_augment(v, lab, axes), axes)
    assert v2 == v and l2 == lab


def test_swap_lut_is_involution():
    lut = swap_lut()
    assert np.array_equal(lut[lut], np.arange(18))
    assert lut[0] == 0 and lut[RoiId.B] == RoiId.B


@given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(-1e6, 1e6, width=32)),
       st.tuples(*[st.floats(0.125, 4.0, width=32)] * 3))
def test_mvol_volume_round_trip(tmp_path_factory, data, spacing):
    path = tmp_path_factory.mktemp("mvol") / "v.mvol"
    v = Volume3(data, spacing)
    write_mvol(v, path)
    back = read_mvol(path)
    assert isinstance(back, Volume3) and back == v and back.dims == v.dims


def test_mvol_labels_round_trip_and_header_size(tmp_path, rng):
    lab = LabelMap(rng.integers(0, 18, size=(3, 4, 5)), spacing=(0.5, 1.0, 2.0))
    write_mvol(lab, tmp_path / "l.mvol")
    assert (tmp_path / "l.mvol").stat().st_size == 38 + 60
    assert read_mvol(tmp_path / "l.mvol") == lab


def test_mvol_errors(tmp_path, rng):
    path = tmp_path / "v.mvol"
    write_mvol(Volume3(rng.normal(size=(1, 2, 2, 2))), path)
    raw = path.read_bytes()
    (tmp_path / "magic.mvol").write_bytes(b"XVOL" + raw[4:])
    with pytest.raises(FormatError, match="magic") as err:
        read_mvol(tmp_path / "magic.mvol")
    assert err.value.offset == 0
    (tmp_path / "short.mvol").write_bytes(raw[:-4])
    with pytest.raises(FormatError, match="payload is 28 bytes, dims imply 32"):
        read_mvol(tmp_path / "short.mvol")
    bad_dtype = bytearray(raw)
    bad_dtype[9] = 7
    (tmp_path / "dtype.mvol").write_bytes(bytes(bad_dtype))
    with pytest.raises(FormatError, match="dtype"):
        read_mvol(tmp_path / "dtype.mvol")
    (tmp_path / "tiny.mvol").write_bytes(b"MV")
    with pytest.raises(FormatError):
        read_mvol(tmp_path / "tiny.mvol")


def _nifti(body, dims=(2, 2, 2), datatype=16, bitpix=32, pixdim=(1.5, 2.0, 3.0), magic=b"n+1\x00",
           slope=0.0, inter=0.0, end="<", ndim=3):
    hdr = bytearray(348)
    struct.pack_into(end + "i", hdr, 0, 348)
    dim = [ndim, *dims, 1, 1, 1, 1][:8]
    struct.pack_into(end + "8h", hdr, 40, *dim)
    struct.pack_into(end + "hh", hdr, 70, datatype, bitpix)
    struct.pack_into(end + "8f", hdr, 76, 1.0, *pixdim, 0, 0, 0, 0)
    struct.pack_into(end + "f", hdr, 108, 352.0)
    struct.pack_into(end + "2f", hdr, 112, slope, inter)
    hdr[344:348] = magic
    return bytes(hdr) + b"\x00" * 4 + body


def test_nifti_minimal_float32(tmp_path):
    vals = np.arange(8, dtype="<f4") * 0.5
    p = tmp_path / "a.nii"
    p.write_bytes(_nifti(vals.tobytes()))
    v = import_nifti(p)
    assert v.dims == (2, 2, 2) and v.spacing == (1.5, 2.0, 3.0)
    assert np.array_equal(v.data.ravel(), vals)
    # x fastest: the second stored value sits at x = 1
    assert v.data[0, 0, 0, 1] == vals[1]


def test_nifti_big_endian_int16_with_scaling(tmp_path):
    vals = np.array([1, -2, 3, 4, 5, 6, 7, 8], dtype=">i2")
    p = tmp_path / "b.nii"
    p.write_bytes(_nifti(vals.tobytes(), datatype=4, bitpix=16, slope=2.0, inter=1.0, end=">"))
    assert np.array_equal(import_nifti(p).data.ravel(), vals.astype(np.float64) * 2 + 1)


def test_nifti_errors(tmp_path):
    body = np.zeros(8, "<f4").tobytes()
    cases = {
        "magic": _nifti(body, magic=b"ni1\x00"),
        "datatype": _nifti(np.zeros(8, "<f8").tobytes(), datatype=64, bitpix=64),
        "dim": _nifti(body, ndim=2),
        "payload": _nifti(body[:-4]),
    }
    for name, raw in cases.items():
        p = tmp_path / f"{name}.nii"
        p.write_bytes(raw)
        with pytest.raises(FormatError, match=name):
            import_nifti(p)
