"""Two-stage segmenter: coarse foreground detection, then 17-ROI labelling inside a crop."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensorad as ad
from .errors import ArgumentError, FormatError, NumericalError
from .fuse import build_network_input, flip_prior_channels
from .nets import EncDecConfig, forward_encdec, init_encdec
from .volcore import N_LABELS, LabelMap, Volume3, flip_array, swap_lut

COARSE, FINE = "coarse.", "fine."
N_MODALITIES = 3


def coarse_target(labels: LabelMap) -> LabelMap:
    return LabelMap((labels.labels > 0).astype(np.uint8), labels.spacing)


@dataclass(frozen=True)
class Box:
    """Half-open voxel box; ``lo``/``hi`` are (x, y, z)."""

    lo: tuple
    hi: tuple

    @property
    def extents(self):
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    def slices(self):
        """numpy slices for (z, y, x) indexed arrays."""
        return tuple(slice(l, h) for l, h in zip(reversed(self.lo), reversed(self.hi)))

    def contains(self, x, y, z) -> bool:
        return all(l <= v < h for v, l, h in zip((x, y, z), self.lo, self.hi))


def crop_box(fg_prob, threshold=0.5, margin=8, grid_multiple=8) -> Box:
    """Bounding box of suprathreshold voxels, padded by ``margin`` and grown to a grid multiple.

    Extents are rounded up to multiples of ``grid_multiple`` (the whole
    volume must itself be such a multiple); growth is split evenly between
    both sides and shifted back inside the volume when it would spill out.
    """
    prob = fg_prob.data if isinstance(fg_prob, ad.Tensor) else np.asarray(fg_prob)
    nz, ny, nx = prob.shape
    dims = (nx, ny, nz)
    hits = np.argwhere(prob >= threshold)
    if len(hits) == 0:
        return Box((0, 0, 0), dims)
    lo_zyx, hi_zyx = hits.min(axis=0), hits.max(axis=0) + 1
    lo, hi = [], []
    for axis, n in enumerate(dims):
        a = max(0, int(lo_zyx[2 - axis]) - margin)
        b = min(n, int(hi_zyx[2 - axis]) + margin)
        want = min(n, -(-(b - a) // grid_multiple) * grid_multiple)
        extra = want - (b - a)
        a -= extra // 2
        b += extra - extra // 2
        if a < 0:
            a, b = 0, b - a
        if b > n:
            a, b = a - (b - n), n
        lo.append(a)
        hi.append(b)
    return Box(tuple(lo), tuple(hi))


@dataclass
class TwoStageModel:
    store: ad.ParamStore
    coarse: EncDecConfig
    fine: EncDecConfig
    use_hard: bool = False

    def save(self, path) -> None:
        path = Path(path)
        self.store.save(path)
        meta = {
            "in_channels": self.coarse.in_channels,
            "levels": self.coarse.levels,
            "base_channels": self.coarse.base_channels,
            "use_attention": int(self.coarse.use_attention),
            "use_hard": int(self.use_hard),
            "crop_margin": self.coarse.crop_margin,
        }
        Path(str(path) + ".meta").write_text("".join(f"{k} = {v}\n" for k, v in meta.items()))

    @classmethod
    def load(cls, path) -> "TwoStageModel":
        meta_path = Path(str(path) + ".meta")
        if not meta_path.exists():
            raise FormatError(f"missing model metadata file {meta_path}")
        meta = {}
        for line in meta_path.read_text().splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                meta[k.strip()] = int(v.strip())
        store = ad.ParamStore.load(path)
        coarse, fine = make_configs(
            EncDecConfig(in_channels=meta["in_channels"], out_classes=2, levels=meta["levels"],
                         base_channels=meta["base_channels"], use_attention=bool(meta["use_attention"]),
                         crop_margin=meta["crop_margin"])
        )
        return cls(store, coarse, fine, bool(meta["use_hard"]))


def make_configs(template: EncDecConfig):
    return replace(template, out_classes=2), replace(template, out_classes=N_LABELS)


def init_two_stage(template: EncDecConfig, use_hard: bool, seed: int, dtype=np.float32) -> TwoStageModel:
    expected = N_MODALITIES + N_LABELS if use_hard else N_MODALITIES
    if template.in_channels != expected:
        raise ArgumentError(f"in_channels must be {expected} when use_hard={use_hard}, got {template.in_channels}")
    coarse, fine = make_configs(template)
    rng = np.random.default_rng(seed)
    store = ad.ParamStore(dtype)
    init_encdec(store, COARSE, coarse, rng)
    init_encdec(store, FINE, fine, rng)
    return TwoStageModel(store, coarse, fine, use_hard)


def forward_encdec_np(model: TwoStageModel, stage: str, x: np.ndarray) -> np.ndarray:
    cfg = model.coarse if stage == COARSE else model.fine
    return forward_encdec(model.store, stage, cfg, ad.Tensor(x.astype(model.store.dtype))).data


@dataclass
class TrainResult:
    model: TwoStageModel
    coarse_loss: list = field(default_factory=list)
    fine_loss: list = field(default_factory=list)
    distinct_inputs: int = 0

    @property
    def combined_loss(self):
        return [c + f for c, f in zip(self.coarse_loss, self.fine_loss)]


def _sample_input(modalities, labels, prior, use_hard):
    x = build_network_input(modalities, prior, use_hard).data
    return np.array(x), np.array(labels.labels)


def _flip_sample(x, lab, axes, use_hard):
    if not axes:
        return x, lab
    x = flip_array(x, axes)
    lab = flip_array(lab, axes)
    if 0 in axes:
        lab = swap_lut()[lab]
        if use_hard:
            x = np.concatenate([x[:N_MODALITIES], flip_prior_channels(x[N_MODALITIES:])])
    return np.ascontiguousarray(x), np.ascontiguousarray(lab)


def train_two_stage(dataset, priors, cfg: EncDecConfig, sgd: ad.SgdConfig, seed: int = 0,
                    steps: int | None = None, flip: bool = True, use_hard: bool | None = None,
                    log_every: int = 0) -> TrainResult:
    """Train the coarse and fine networks side by side, one subject per step.

    ``dataset`` is a list of (modalities, labels) pairs; ``priors`` a
    matching list of AtlasPrior (or None entries when hard attention is off).
    The fine network always sees crops around the ground-truth foreground.
    """
    dataset = list(dataset)
    if not dataset:
        raise ArgumentError("training needs at least one subject")
    if use_hard is None:
        use_hard = cfg.in_channels == N_MODALITIES + N_LABELS
    priors = list(priors) if priors is not None else [None] * len(dataset)
    if len(priors) != len(dataset):
        raise ArgumentError(f"{len(priors)} priors for {len(dataset)} subjects")
    steps = steps if steps is not None else sgd.total_steps
    if not steps:
        raise ArgumentError("number of training steps not given")
    if sgd.total_steps is None:
        sgd = replace(sgd, total_steps=steps)
    for mod, lab in dataset:
        cfg.check_extents(mod.data.shape[1:])
        if mod.dims != lab.dims:
            raise ArgumentError(f"modalities {mod.dims} and labels {lab.dims} differ")

    model = init_two_stage(cfg, use_hard, seed)
    rng = np.random.default_rng(seed)
    result = TrainResult(model)
    seen = set()
    order = []
    for step in range(steps):
        if not order:
            order = list(rng.permutation(len(dataset))[::-1])
        i = order.pop()
        axes = {a for a in range(3) if rng.random() < 0.5} if flip else set()
        x, lab = _sample_input(dataset[i][0], dataset[i][1], priors[i], use_hard)
        x, lab = _flip_sample(x, lab, axes, use_hard)
        seen.add(hashlib.sha1(x.tobytes()).hexdigest())

        xt = ad.Tensor(x.astype(model.store.dtype))
        probs = forward_encdec(model.store, COARSE, model.coarse, xt)
        loss_c = ad.segmentation_loss(probs, (lab > 0).astype(np.int64))
        ad.backward(loss_c, model.store)

        box = crop_box((lab > 0).astype(np.float32), 0.5, cfg.crop_margin, cfg.multiple)
        sl = box.slices()
        xf = ad.Tensor(np.ascontiguousarray(x[(slice(None),) + sl]).astype(model.store.dtype))
        probs_f = forward_encdec(model.store, FINE, model.fine, xf)
        loss_f = ad.segmentation_loss(probs_f, lab[sl].astype(np.int64))
        ad.backward(loss_f, model.store)

        lc, lf = float(loss_c.data), float(loss_f.data)
        if not (np.isfinite(lc) and np.isfinite(lf)):
            raise NumericalError(f"non-finite training loss at step {step}")
        result.coarse_loss.append(lc)
        result.fine_loss.append(lf)
        ad.sgd_step(model.store, sgd, step)
        if log_every and (step % log_every == 0 or step == steps - 1):
            print(f"step {step:5d}  coarse {lc:.4f}  fine {lf:.4f}", flush=True)
    result.distinct_inputs = len(seen)
    return result


def infer(model: TwoStageModel, modalities: Volume3, prior=None, return_box=False):
    """Coarse foreground detection, crop, fine labelling; labels outside the crop are background."""
    x = build_network_input(modalities, prior, model.use_hard).data
    if x.shape[0] != model.coarse.in_channels:
        raise ArgumentError(f"model expects {model.coarse.in_channels} input channels, got {x.shape[0]}")
    model.coarse.check_extents(x.shape[1:])
    probs = forward_encdec_np(model, COARSE, x)
    box = crop_box(probs[1], 0.5, model.coarse.crop_margin, model.coarse.multiple)
    sl = box.slices()
    fine = forward_encdec_np(model, FINE, np.ascontiguousarray(x[(slice(None),) + sl]))
    out = np.zeros(x.shape[1:], dtype=np.uint8)
    out[sl] = fine.argmax(axis=0)
    labels = LabelMap(out, modalities.spacing)
    return (labels, box) if return_box else labels
