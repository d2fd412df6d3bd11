"""Dice overlap, five-fold splits and the per-variant Dice report."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError
from ..volcore import N_ROIS, LabelMap, RoiId, check_same_dims

N_FOLDS = 5
ROI_NAMES = tuple(r.name for r in RoiId)


def _labels(item):
    return item.labels if isinstance(item, LabelMap) else np.asarray(item)


def dice(pred, truth, code) -> float:
    """2|P&T| / (|P|+|T|) for one label code; 1.0 when both sets are empty."""
    if isinstance(pred, LabelMap) and isinstance(truth, LabelMap):
        check_same_dims(pred, truth)
    p, t = _labels(pred), _labels(truth)
    if p.shape != t.shape:
        raise ArgumentError(f"dimension mismatch: {p.shape} vs {t.shape}")
    pm, tm = p == code, t == code
    total = int(pm.sum()) + int(tm.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(pm & tm)) / total


def roi_dice(pred, truth):
    """Dice for every ROI code 1..17 plus a mask of ROIs present in either map."""
    p, t = _labels(pred), _labels(truth)
    if p.shape != t.shape:
        raise ArgumentError(f"dimension mismatch: {p.shape} vs {t.shape}")
    scores = np.array([dice(p, t, c) for c in range(1, N_ROIS + 1)])
    present = np.array([bool(np.any(p == c) or np.any(t == c)) for c in range(1, N_ROIS + 1)])
    return scores, present


def foreground_dice(pred, truth) -> float:
    """Dice of the merged foreground (any nonzero code)."""
    p, t = _labels(pred) > 0, _labels(truth) > 0
    return dice(p.astype(np.uint8), t.astype(np.uint8), 1)


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple

    def __post_init__(self):
        flat = [i for f in self.folds for i in f]
        if len(set(flat)) != len(flat):
            raise ArgumentError("folds overlap")
        sizes = [len(f) for f in self.folds]
        if max(sizes) - min(sizes) > 1:
            raise ArgumentError(f"fold sizes {sizes} differ by more than one")

    @property
    def n_subjects(self):
        return sum(len(f) for f in self.folds)

    def test(self, k):
        return list(self.folds[k])

    def train(self, k):
        return sorted(i for j, f in enumerate(self.folds) if j != k for i in f)

    def fold_of(self, subject):
        for k, f in enumerate(self.folds):
            if subject in f:
                return k
        raise ArgumentError(f"subject {subject} is in no fold")


def five_fold(n_subjects: int, seed: int = 0) -> FoldSplit:
    """Seeded shuffle, then round-robin assignment to five folds."""
    if n_subjects < N_FOLDS:
        raise ArgumentError(f"five-fold cross-validation needs at least {N_FOLDS} subjects, got {n_subjects}")
    perm = np.random.default_rng(seed).permutation(n_subjects)
    return FoldSplit(tuple(tuple(sorted(int(i) for i in perm[k::N_FOLDS])) for k in range(N_FOLDS)))


@dataclass
class DiceReport:
    """Per-subject, per-ROI Dice in [0, 1] for one variant.

    Aggregates are x100. The overall score of a subject is its mean over
    the 17 ROIs; the overall mean and std are then taken across test
    subjects pooled over folds (population std). Per-ROI statistics only
    use subjects where the ROI occurs in the truth or the prediction.
    """

    variant: str
    subjects: list = field(default_factory=list)
    folds: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    present: list = field(default_factory=list)

    def add(self, subject, fold, pred, truth):
        s, p = roi_dice(pred, truth)
        self.add_scores(subject, fold, s, p)

    def add_scores(self, subject, fold, scores, present):
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (N_ROIS,) or np.any(scores < 0) or np.any(scores > 1):
            raise ArgumentError("a report row needs 17 Dice values in [0, 1]")
        self.subjects.append(int(subject))
        self.folds.append(int(fold))
        self.scores.append(scores)
        self.present.append(np.asarray(present, dtype=bool))

    def __len__(self):
        return len(self.subjects)

    def matrix(self):
        return np.array(self.scores).reshape(-1, N_ROIS), np.array(self.present, dtype=bool).reshape(-1, N_ROIS)

    def subject_means(self):
        return self.matrix()[0].mean(axis=1)

    def overall(self):
        """(mean, std) x100 over subjects; NaN for an empty report."""
        m = self.subject_means()
        if len(m) == 0:
            return float("nan"), float("nan")
        return 100 * float(m.mean()), 100 * float(m.std())

    def per_roi(self):
        """Arrays of per-ROI mean and std x100; NaN where the ROI never occurs."""
        s, p = self.matrix()
        means, stds = np.full(N_ROIS, np.nan), np.full(N_ROIS, np.nan)
        for r in range(N_ROIS):
            vals = s[p[:, r], r]
            if len(vals):
                means[r], stds[r] = 100 * vals.mean(), 100 * vals.std()
        return means, stds

    def same_numbers(self, other) -> bool:
        a, b = self.matrix(), other.matrix()
        return (self.variant == other.variant and self.subjects == other.subjects and self.folds == other.folds
                and np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1]))
