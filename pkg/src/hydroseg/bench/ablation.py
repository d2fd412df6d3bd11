"""Cross-validated ablation over the four pipeline variants."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .. import tensorad as ad
from ..errors import ArgumentError, HydrosegError, with_context
from ..fuse import fuse_majority, propagate
from ..nets import EncDecConfig
from ..register import RegConfig
from ..segnet import N_MODALITIES, infer, train_two_stage
from ..volcore import N_LABELS, normalize_max, read_mvol, write_mvol
from .metrics import DiceReport, FoldSplit, five_fold
from .tables import render_tables, to_csv

VARIANTS = ("base", "base_hard", "base_hard_soft", "mabs_only")
# (uses the atlas prior as input, uses position attention)
VARIANT_FLAGS = {
    "base": (False, False),
    "base_hard": (True, False),
    "base_hard_soft": (True, True),
}


@dataclass
class BenchConfig:
    """Everything a variant run needs; defaults are the desk-scale settings."""

    seed: int = 0
    # segmentation networks
    levels: int = 3
    base_channels: int = 8
    crop_margin: int = 8
    steps: int = 600
    lr0: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    clip_norm: float = 1.0
    warmup_steps: int = 30
    flip: bool = True
    # atlases per query, 0 means every training subject
    k_atlases: int = 0
    # registration
    reg_metric: str = "mse"
    reg_lambda: float = 0.01
    reg_levels: int = 3
    reg_iters: int = 100

    def __post_init__(self):
        if self.steps < 1:
            raise ArgumentError(f"steps must be >= 1, got {self.steps}")
        if self.k_atlases < 0:
            raise ArgumentError(f"k_atlases must be >= 0, got {self.k_atlases}")
        self.reg()
        self.sgd()

    def reg(self) -> RegConfig:
        return RegConfig(metric=self.reg_metric, lambda_smooth=self.reg_lambda, levels=self.reg_levels,
                         iters_per_level=self.reg_iters, seed=self.seed)

    def sgd(self) -> ad.SgdConfig:
        return ad.SgdConfig(lr0=self.lr0, momentum=self.momentum, weight_decay=self.weight_decay,
                            total_steps=self.steps, clip_norm=self.clip_norm or None,
                            warmup_steps=self.warmup_steps)

    def net(self, variant) -> EncDecConfig:
        hard, soft = VARIANT_FLAGS[variant]
        return EncDecConfig(in_channels=N_MODALITIES + (N_LABELS if hard else 0), out_classes=2,
                            levels=self.levels, base_channels=self.base_channels, use_attention=soft,
                            crop_margin=self.crop_margin)

    @classmethod
    def field_types(cls):
        return {f.name: f.type for f in fields(cls)}

    def as_dict(self):
        return asdict(self)


class PropagationCache:
    """Atlas labels warped onto query subjects, keyed by (atlas, query) index.

    Registrations dominate the cost of the hard variants and are shared by
    every fold, so each ordered pair is computed once. With a directory the
    results also persist between runs.
    """

    def __init__(self, dataset, reg: RegConfig, directory=None):
        self.dataset, self.reg = dataset, reg
        self.directory = Path(directory) if directory else None
        self._maps = {}
        self.computed = 0

    def _path(self, atlas, query):
        return self.directory / f"prop_{atlas}_to_{query}.mvol"

    def get(self, atlas, query):
        key = (atlas, query)
        if key in self._maps:
            return self._maps[key]
        if self.directory and self._path(*key).exists():
            lab = read_mvol(self._path(*key))
        else:
            a, q = self.dataset[atlas], self.dataset[query]
            lab = propagate((a.image, a.labels), q.image, self.reg)
            self.computed += 1
            if self.directory:
                self.directory.mkdir(parents=True, exist_ok=True)
                write_mvol(lab, self._path(*key))
        self._maps[key] = lab
        return lab

    def fuse(self, atlases, query):
        return fuse_majority([self.get(a, query) for a in atlases])


def atlases_for(query, train_ids, k=0):
    """Training subjects used as atlases for a query; never the query itself."""
    pool = [i for i in train_ids if i != query]
    if not pool:
        raise ArgumentError(f"no atlases available for subject {query}")
    return pool[:k] if k else pool


def modalities(subject):
    return normalize_max(subject.image)


def _log(log, msg):
    if log:
        log(msg)


def run_fold(dataset, split: FoldSplit, fold: int, variant: str, cfg: BenchConfig, cache: PropagationCache,
             report: DiceReport, log=None):
    train_ids, test_ids = split.train(fold), split.test(fold)
    if variant == "mabs_only":
        for q in test_ids:
            consensus, _ = cache.fuse(atlases_for(q, train_ids, cfg.k_atlases), q)
            report.add(q, fold, consensus, dataset[q].labels)
        return None
    hard, _ = VARIANT_FLAGS[variant]
    prior = {}
    if hard:
        for i in train_ids + test_ids:
            prior[i] = cache.fuse(atlases_for(i, train_ids, cfg.k_atlases), i)[1]
    data = [(modalities(dataset[i]), dataset[i].labels) for i in train_ids]
    priors = [prior[i] for i in train_ids] if hard else None
    t0 = time.time()
    result = train_two_stage(data, priors, cfg.net(variant), cfg.sgd(), seed=cfg.seed * 1000 + fold,
                             steps=cfg.steps, flip=cfg.flip, use_hard=hard)
    _log(log, f"  fold {fold} {variant}: trained {cfg.steps} steps in {time.time() - t0:.0f}s, "
              f"loss {result.combined_loss[0]:.3f} -> {np.mean(result.combined_loss[-10:]):.3f}")
    for q in test_ids:
        pred = infer(result.model, modalities(dataset[q]), prior.get(q))
        report.add(q, fold, pred, dataset[q].labels)
    return result


def run_variant(dataset, split: FoldSplit, variant: str, cfg: BenchConfig | None = None,
                cache: PropagationCache | None = None, log=None) -> DiceReport:
    """Evaluate one variant over every fold; test subjects are scored on all 17 ROIs."""
    cfg = cfg or BenchConfig()
    if variant not in VARIANTS:
        raise ArgumentError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    dataset = list(dataset)
    if split.n_subjects != len(dataset):
        raise ArgumentError(f"split covers {split.n_subjects} subjects, dataset has {len(dataset)}")
    cache = cache or PropagationCache(dataset, cfg.reg())
    report = DiceReport(variant)
    for fold in range(len(split.folds)):
        try:
            run_fold(dataset, split, fold, variant, cfg, cache, report, log)
        except HydrosegError as exc:
            raise with_context(exc, f"variant {variant}, fold {fold}")
    return report


def run_ablation(dataset, cfg: BenchConfig | None = None, out_dir=None, variants=VARIANTS, log=None):
    """All variants over one seeded five-fold split; writes tables and CSV when ``out_dir`` is given."""
    cfg = cfg or BenchConfig()
    dataset = list(dataset)
    split = five_fold(len(dataset), cfg.seed)
    cache_dir = Path(out_dir) / "propagated" if out_dir else None
    cache = PropagationCache(dataset, cfg.reg(), cache_dir)
    reports = []
    for v in variants:
        t0 = time.time()
        reports.append(run_variant(dataset, split, v, cfg, cache, log))
        mean, std = reports[-1].overall()
        _log(log, f"{v}: {mean:.2f} ± {std:.2f} ({time.time() - t0:.0f}s)")
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "tables.txt").write_text(render_tables(reports))
        (out / "report.csv").write_text(to_csv(reports))
        (out / "config.txt").write_text("".join(f"{k} = {v}\n" for k, v in cfg.as_dict().items()))
    return reports
