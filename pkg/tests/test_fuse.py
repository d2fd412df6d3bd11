import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hydroseg.errors import ArgumentError
from hydroseg.fuse import (
    AtlasPrior, AtlasSet, build_network_input, flip_prior_channels, fuse_majority, hard_attention, propagate,
)
from hydroseg.phantom import PhantomConfig, make_base_atlas, make_dataset
from hydroseg.register import RegConfig
from hydroseg.volcore import LabelMap, Volume3, flip_array, swap_lut


def recount(maps):
    """Per-voxel vote count by explicit loops; ties go to the lowest code."""
    arrs = [m.labels for m in maps]
    shape = arrs[0].shape
    label = np.zeros(shape, np.uint8)
    frac = np.zeros((18,) + shape)
    for idx in np.ndindex(shape):
        votes = [0] * 18
        for a in arrs:
            votes[a[idx]] += 1
        best = max(votes)
        label[idx] = votes.index(best)
        for c in range(18):
            frac[(c,) + idx] = votes[c] / len(arrs)
    return label, frac


def test_fusion_examples():
    one = LabelMap(np.array([[[0, 5], [17, 3]]]))
    cons, prior = fuse_majority([one])
    assert cons == one
    assert np.array_equal(prior.fractions.argmax(axis=0), one.labels) and set(np.unique(prior.fractions)) == {0, 1}
    v = [LabelMap(np.full((1, 1, 1), c)) for c in (1, 1, 2)]
    cons, prior = fuse_majority(v)
    assert cons.labels.item() == 1
    assert prior.fractions[1].item() == pytest.approx(2 / 3) and prior.fractions[2].item() == pytest.approx(1 / 3)
    cons, _ = fuse_majority([LabelMap(np.full((1, 1, 1), 2)), LabelMap(np.full((1, 1, 1), 1))])
    assert cons.labels.item() == 1


def test_fusion_errors():
    with pytest.raises(ArgumentError):
        fuse_majority([])
    with pytest.raises(ArgumentError):
        fuse_majority([LabelMap(np.zeros((2, 2, 2))), LabelMap(np.zeros((2, 2, 3)))])


@given(st.integers(0, 2**31), st.sampled_from([1, 2, 3, 4, 5]))
def test_fusion_matches_recount(seed, k):
    r = np.random.default_rng(seed)
    maps = [LabelMap(r.integers(0, 4, size=(3, 3, 3)) * r.integers(1, 5)) for _ in range(k)]
    cons, prior = fuse_majority(maps)
    label, frac = recount(maps)
    assert np.array_equal(cons.labels, label)
    assert np.allclose(prior.fractions, frac, atol=1e-7)
    assert np.max(np.abs(prior.fractions.sum(axis=0) - 1)) < 1e-6


@given(st.integers(0, 2**31))
def test_fusion_is_permutation_invariant(seed):
    r = np.random.default_rng(seed)
    maps = [LabelMap(r.integers(0, 18, size=(2, 3, 3))) for _ in range(4)]
    a, pa = fuse_majority(maps)
    b, pb = fuse_majority([maps[i] for i in r.permutation(4)])
    assert a == b and np.array_equal(pa.fractions, pb.fractions)


def test_identical_maps_give_themselves(rng):
    lab = LabelMap(rng.integers(0, 18, size=(3, 4, 5)))
    assert fuse_majority([lab] * 3)[0] == lab


def test_atlas_prior_validation():
    with pytest.raises(ArgumentError):
        AtlasPrior(np.zeros((17, 2, 2, 2)))
    with pytest.raises(ArgumentError):
        AtlasPrior(np.full((18, 2, 2, 2), 0.1))
    uniform = AtlasPrior(np.full((18, 1, 1, 2), 1 / 18))
    assert AtlasPrior.from_volume(uniform.to_volume()).fractions.shape == (18, 1, 1, 2)


def test_build_network_input(rng):
    mods = Volume3(rng.random((3, 2, 2, 2)))
    assert build_network_input(mods, None, False) is mods
    maps = [LabelMap(np.full((2, 2, 2), c)) for c in range(18)]
    _, prior = fuse_majority(maps)
    assert np.allclose(prior.fractions, 1 / 18)
    x = build_network_input(mods, prior, True)
    assert x.channels == 21 and np.allclose(x.data[3:].sum(axis=0), 1, atol=1e-6)
    assert np.array_equal(x.data[:3], mods.data)
    with pytest.raises(ArgumentError):
        build_network_input(mods, None, True)
    with pytest.raises(ArgumentError):
        build_network_input(Volume3(rng.random((3, 2, 2, 4))), prior, True)


def test_flip_prior_channels_tracks_label_swap(rng):
    lab = LabelMap(rng.integers(0, 18, size=(2, 3, 4)))
    _, prior = fuse_majority([lab])
    flipped_lab = swap_lut()[flip_array(lab.labels, {0})]
    flipped_prior = flip_prior_channels(flip_array(prior.fractions, {0}))
    assert np.array_equal(flipped_prior.argmax(axis=0), flipped_lab)


@pytest.fixture(scope="module")
def base():
    return make_base_atlas((24, 24, 24))


def test_self_propagation_keeps_labels(base):
    image, labels = base
    out = propagate((image, labels), image, RegConfig(iters_per_level=20))
    assert out.codes() <= labels.codes()
    for code in labels.codes() - {0}:
        p, t = out.labels == code, labels.labels == code
        assert 2 * (p & t).sum() / (p.sum() + t.sum()) >= 0.95


def test_propagation_beats_unregistered(base):
    image, labels = base
    subj = make_dataset(PhantomConfig(dims=(24, 24, 24), n_subjects=1, deform_amplitude=2.0,
                                      ventricle_scale=1.5, seed=3))[0]
    out = propagate((image, labels), subj.image, RegConfig())

    def fg_dice(a, b):
        a, b = a > 0, b > 0
        return 2 * (a & b).sum() / (a.sum() + b.sum())

    t = subj.labels.labels
    assert fg_dice(out.labels, t) > fg_dice(labels.labels, t)


def test_hard_attention_runs_end_to_end(base):
    image, labels = base
    atlases = AtlasSet([(image, labels)] * 2)
    cons, prior = hard_attention(atlases, image, RegConfig(levels=1, iters_per_level=3))
    assert cons.dims == image.dims and prior.dims == image.dims
    with pytest.raises(ArgumentError):
        AtlasSet([])
