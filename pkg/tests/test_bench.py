import re

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hydroseg.bench import (
    VARIANTS, BenchConfig, DiceReport, FoldSplit, PropagationCache, apply_overrides, dice, five_fold, parse_csv,
    read_config, render_tables, roi_dice, run_variant, to_csv,
)
from hydroseg.bench import ablation
from hydroseg.errors import ArgumentError, FormatError, NumericalError
from hydroseg.phantom import PhantomConfig, Subject, make_base_atlas, make_dataset
from hydroseg.volcore import LabelMap
from hydroseg.warpfield import identity_field


def recount_dice(p, t, code):
    both = only = 0
    for a, b in zip(p.ravel(), t.ravel()):
        both += int(a == code and b == code)
        only += int(a == code) + int(b == code)
    return 1.0 if only == 0 else 2.0 * both / only


def test_dice_examples():
    lab = LabelMap(np.array([[[0, 3, 3, 5]]]))
    assert dice(lab, lab, 3) == 1.0
    a, b = np.zeros((1, 1, 4), np.uint8), np.zeros((1, 1, 4), np.uint8)
    a[0, 0, 0], b[0, 0, 1] = 2, 2
    assert dice(a, b, 2) == 0.0
    p = np.zeros((2, 2, 3), np.uint8)
    t = np.zeros((2, 2, 3), np.uint8)
    p.flat[[0, 1, 2, 3]] = 7
    t.flat[[2, 3, 4, 5]] = 7
    assert dice(p, t, 7) == 0.5 == recount_dice(p, t, 7)
    assert dice(p, t, 9) == 1.0
    with pytest.raises(ArgumentError):
        dice(p, t[:1], 7)


@given(st.integers(0, 2**31), st.integers(0, 5))
def test_dice_matches_recount_exactly(seed, code):
    r = np.random.default_rng(seed)
    p, t = r.integers(0, 6, size=(3, 4, 5)), r.integers(0, 6, size=(3, 4, 5))
    assert dice(p, t, code) == recount_dice(p, t, code)


def test_five_fold_examples():
    split = five_fold(21, seed=0)
    assert sorted(len(f) for f in split.folds) == [4, 4, 4, 4, 5]
    assert sorted(i for f in split.folds for i in f) == list(range(21))
    assert five_fold(21, seed=0) == split and five_fold(21, seed=1) != split
    assert split.train(0) == sorted(set(range(21)) - set(split.test(0)))
    assert split.fold_of(split.test(3)[0]) == 3
    with pytest.raises(ArgumentError):
        five_fold(4)


@given(st.integers(5, 200), st.integers(0, 2**31))
def test_fold_invariants(n, seed):
    split = five_fold(n, seed)
    flat = [i for f in split.folds for i in f]
    assert len(split.folds) == 5 and sorted(flat) == list(range(n))
    sizes = [len(f) for f in split.folds]
    assert max(sizes) - min(sizes) <= 1


def test_fold_split_validation():
    with pytest.raises(ArgumentError):
        FoldSplit(((0, 1), (1, 2)))
    with pytest.raises(ArgumentError):
        FoldSplit(((0, 1, 2), (3,)))


def _report(variant="base_hard_soft", n=4, seed=0, absent=(3,)):
    r = np.random.default_rng(seed)
    rep = DiceReport(variant)
    for i in range(n):
        present = np.ones(17, bool)
        present[list(absent)] = False
        scores = r.random(17)
        scores[list(absent)] = 1.0
        rep.add_scores(i, i % 5, scores, present)
    return rep


def test_report_aggregates():
    rep = _report()
    s, _ = rep.matrix()
    mean, std = rep.overall()
    assert mean == pytest.approx(100 * s.mean(axis=1).mean()) and std == pytest.approx(100 * s.mean(axis=1).std())
    means, stds = rep.per_roi()
    assert np.isnan(means[3]) and np.all(stds[~np.isnan(stds)] >= 0)
    assert means[0] == pytest.approx(100 * s[:, 0].mean())
    with pytest.raises(ArgumentError):
        rep.add_scores(9, 0, np.full(17, 1.5), np.ones(17, bool))
    assert np.isnan(DiceReport("base").overall()[0])


def test_roi_dice_presence():
    t = np.zeros((2, 2, 2), np.uint8)
    t[0, 0, 0] = 1
    scores, present = roi_dice(t, t)
    assert scores[0] == 1.0 and present[0] and not present[1:].any() and np.all(scores == 1.0)


def test_render_tables_layout():
    text = render_tables([_report("base", seed=1), _report()])
    lines = text.splitlines()
    row = next(l for l in lines if l.startswith("Base + Hard + Soft"))
    assert re.fullmatch(r"Base \+ Hard \+ Soft  \d+\.\d\d ± \d+\.\d\d", row)
    headers = [l.split() for l in lines if l.strip().startswith("IR") or l.strip().startswith("ICRP")
               or l.strip().startswith("CLA")]
    assert [len(h) for h in headers] == [6, 6, 5]
    assert sum(len(h) for h in headers) == 17
    assert "—" in text and "TL" in headers[0]
    with pytest.raises(ArgumentError):
        render_tables([])


def test_csv_round_trip():
    reports = [_report("base", seed=1), _report("mabs_only", seed=2, absent=(0, 16))]
    back = parse_csv(to_csv(reports))
    assert len(back) == 2 and all(a.same_numbers(b) for a, b in zip(reports, back))
    with pytest.raises(FormatError):
        parse_csv("a,b\n1,2\n")
    bad = to_csv(reports).replace("0.", "x.", 1)
    with pytest.raises(FormatError):
        parse_csv(bad)


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# desk run\nsteps = 12\nlr0 = 0.02  # lower\nflip = false\n\nreg_metric = ncc\n")
    cfg = apply_overrides(BenchConfig(), read_config(path))
    assert cfg.steps == 12 and cfg.lr0 == 0.02 and cfg.flip is False and cfg.reg().metric == "ncc"
    assert apply_overrides(cfg, {"steps": 5}).steps == 5
    with pytest.raises(ArgumentError):
        apply_overrides(cfg, {"nope": "1"})
    with pytest.raises(ArgumentError):
        apply_overrides(cfg, {"steps": "many"})
    (tmp_path / "bad.cfg").write_text("steps 12\n")
    with pytest.raises(FormatError):
        read_config(tmp_path / "bad.cfg")
    with pytest.raises(ArgumentError):
        BenchConfig(steps=0)


def _fast_cfg(**kw):
    base = dict(steps=2, levels=2, base_channels=2, crop_margin=4, reg_levels=1, reg_iters=3, k_atlases=2)
    base.update(kw)
    return BenchConfig(**base)


@pytest.fixture(scope="module")
def micro():
    return make_dataset(PhantomConfig(dims=(24, 24, 24), n_subjects=6, deform_amplitude=1.0, seed=4))


def test_mabs_only_on_copies_is_near_perfect():
    image, labels = make_base_atlas((24, 24, 24))
    copies = [Subject(i, i, image, labels, identity_field(image.dims)) for i in range(5)]
    rep = run_variant(copies, five_fold(5, 0), "mabs_only", _fast_cfg(reg_levels=2, reg_iters=10, k_atlases=0))
    s, p = rep.matrix()
    assert p.all() and s.min() >= 0.95


def test_all_variants_on_micro_dataset(micro):
    split = five_fold(6, 0)
    cache = PropagationCache(micro, _fast_cfg().reg())
    for v in VARIANTS:
        rep = run_variant(micro, split, v, _fast_cfg(), cache)
        s, _ = rep.matrix()
        assert s.shape == (6, 17) and sorted(rep.subjects) == list(range(6))
    # every ordered (atlas, query) pair is registered at most once across variants and folds
    assert cache.computed <= 6 * 5


def test_base_variant_never_builds_priors(micro, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("prior requested")

    monkeypatch.setattr(PropagationCache, "fuse", boom)
    seen = []
    real = ablation.train_two_stage

    def spy(data, priors, cfg, *a, **k):
        seen.append((priors, cfg.in_channels))
        return real(data, priors, cfg, *a, **k)

    monkeypatch.setattr(ablation, "train_two_stage", spy)
    run_variant(micro, five_fold(6, 0), "base", _fast_cfg(steps=1))
    assert seen and all(p is None and c == 3 for p, c in seen)


def test_fold_failures_carry_context(micro, monkeypatch):
    def fail(*a, **k):
        raise NumericalError("loss became NaN")

    monkeypatch.setattr(ablation, "train_two_stage", fail)
    with pytest.raises(NumericalError, match="variant base, fold 0: loss became NaN"):
        run_variant(micro, five_fold(6, 0), "base", _fast_cfg())
    with pytest.raises(ArgumentError):
        run_variant(micro, five_fold(6, 0), "unet", _fast_cfg())
    with pytest.raises(ArgumentError):
        run_variant(micro, five_fold(5, 0), "base", _fast_cfg())


def test_ablation_is_deterministic_and_writes_outputs(micro, tmp_path):
    cfg = _fast_cfg()
    variants = ("base", "mabs_only")
    a = ablation.run_ablation(micro, cfg, tmp_path / "a", variants)
    b = ablation.run_ablation(micro, cfg, tmp_path / "b", variants)
    assert all(x.same_numbers(y) for x, y in zip(a, b))
    for name in ("tables.txt", "report.csv", "config.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    # a rerun picks up the propagated maps cached on disk
    c = ablation.run_ablation(micro, cfg, tmp_path / "a", ("mabs_only",))
    assert c[0].same_numbers(a[1])
