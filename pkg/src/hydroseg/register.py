"""Deformable registration: a per-pair field optimizer and a learned field predictor.

Both minimise ``similarity(f, m o phi) + lambda_smooth * smoothness(phi) / n_voxels``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import tensorad as ad
from .errors import ArgumentError, DegenerateInputError
from .nets import EncDecConfig, forward_encdec, init_encdec
from .volcore import Volume3, check_same_dims, sample_grid
from .warpfield import DisplacementField, identity_field, resize_field, sample_points, smoothness_energy_array

MIN_LEVEL_EXTENT = 4


@dataclass
class RegConfig:
    metric: str = "mse"
    lambda_smooth: float = 0.01
    levels: int = 3
    iters_per_level: int = 100
    step: float = 1.0
    mode: str = "direct"
    seed: int = 0
    # gradient preconditioning width (voxels) for the direct optimizer
    smooth_sigma: float = 1.0
    # amortized predictor
    train_iters: int = 300
    lr: float = 0.05
    base_channels: int = 8
    net_levels: int = 3

    def __post_init__(self):
        if self.metric not in ("mse", "ncc"):
            raise ArgumentError(f"unknown similarity metric {self.metric!r}")
        if self.mode not in ("direct", "amortized"):
            raise ArgumentError(f"unknown registration mode {self.mode!r}")
        if self.levels < 1 or self.iters_per_level < 1:
            raise ArgumentError("levels and iters_per_level must be >= 1")
        if not self.step > 0:
            raise ArgumentError(f"step must be positive, got {self.step}")
        if self.lambda_smooth < 0:
            raise ArgumentError(f"lambda_smooth must be >= 0, got {self.lambda_smooth}")


# --------------------------------------------------------------------------
# similarity


def similarity_array(f: np.ndarray, w: np.ndarray, metric: str = "mse"):
    """Similarity loss between fixed and warped arrays and its gradient w.r.t. the warped one."""
    if f.shape != w.shape:
        raise ArgumentError(f"similarity shape mismatch {f.shape} vs {w.shape}")
    if metric == "mse":
        diff = w - f
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size
    if metric == "ncc":
        a = f - f.mean()
        b = w - w.mean()
        sa, sb = float(np.sum(a * a)), float(np.sum(b * b))
        if sa <= 0 or sb <= 0:
            raise DegenerateInputError("normalized cross-correlation is undefined for a constant image")
        ncc = float(np.sum(a * b)) / np.sqrt(sa * sb)
        grad = -(a / np.sqrt(sa * sb) - ncc * b / sb)
        return -ncc, grad
    raise ArgumentError(f"unknown similarity metric {metric!r}")


def similarity(f: Volume3, warped_m: Volume3, metric: str = "mse"):
    check_same_dims(f, warped_m)
    if f.channels != warped_m.channels:
        raise ArgumentError(f"channel mismatch {f.channels} vs {warped_m.channels}")
    value, grad = similarity_array(f.data.astype(np.float64), warped_m.data.astype(np.float64), metric)
    return value, grad


# --------------------------------------------------------------------------
# direct optimisation


def _pyramid(arr: np.ndarray, levels: int):
    """Finest-first list of progressively blurred and halved copies of a 3D array."""
    out = [arr]
    for _ in range(levels - 1):
        prev = out[-1]
        if min(prev.shape) < 2 * MIN_LEVEL_EXTENT:
            break
        blurred = ndimage.gaussian_filter(prev, sigma=1.0, mode="nearest")
        new_shape = tuple(max(1, (n + 1) // 2) for n in prev.shape)
        axes = [(np.arange(n2) + 0.5) * (n / n2) - 0.5 for n2, n in zip(new_shape, prev.shape)]
        z, y, x = np.meshgrid(*axes, indexing="ij")
        out.append(sample_grid(blurred, x, y, z))
    return out


class _Objective:
    def __init__(self, f, m, cfg: RegConfig):
        self.f, self.m, self.cfg = f, m, cfg
        self.n = f.size

    def __call__(self, u):
        px, py, pz = sample_points(u)
        w, (gx, gy, gz) = sample_grid(self.m, px, py, pz, with_grad=True)
        sim, dw = similarity_array(self.f, w, self.cfg.metric)
        loss, grad = sim, np.stack([dw * gx, dw * gy, dw * gz])
        if self.cfg.lambda_smooth:
            energy, g_s = smoothness_energy_array(u)
            scale = self.cfg.lambda_smooth / self.n
            loss += scale * energy
            grad += scale * g_s
        return loss, grad


def _descend(objective, u, cfg: RegConfig, min_step=1e-3):
    loss, grad = objective(u)
    step = cfg.step
    for _ in range(cfg.iters_per_level):
        if cfg.smooth_sigma > 0:
            d = np.stack([ndimage.gaussian_filter(g, cfg.smooth_sigma, mode="nearest") for g in grad])
        else:
            d = grad
        peak = float(np.max(np.abs(d)))
        if peak == 0:
            break
        d /= peak
        while step >= min_step:
            cand = u - step * d
            c_loss, c_grad = objective(cand)
            if c_loss < loss:
                u, loss, grad = cand, c_loss, c_grad
                step = min(step * 1.25, cfg.step)
                break
            step *= 0.5
        else:
            break
    return u, loss


def registration_loss(f: np.ndarray, m: np.ndarray, vectors: np.ndarray, cfg: RegConfig) -> float:
    return _Objective(f.astype(np.float64), m.astype(np.float64), cfg)(vectors.astype(np.float64))[0]


def _single_channel(vol: Volume3, name):
    if vol.channels != 1:
        raise ArgumentError(f"{name} must be single-channel for registration, got {vol.channels} channels")
    return vol.data[0].astype(np.float64)


def register_direct(f: Volume3, m: Volume3, cfg: RegConfig | None = None) -> DisplacementField:
    """Coarse-to-fine gradient descent on the field with a halving line search.

    The update direction is the loss gradient smoothed by a Gaussian of
    width ``cfg.smooth_sigma``, scaled so its largest component is one
    voxel times the current step. The coarse-level field is resized onto
    the next level and refined there.
    """
    cfg = cfg or RegConfig()
    check_same_dims(f, m)
    fa, ma = _single_channel(f, "fixed image"), _single_channel(m, "moving image")
    f_pyr, m_pyr = _pyramid(fa, cfg.levels), _pyramid(ma, cfg.levels)
    phi = None
    for f_l, m_l in zip(reversed(f_pyr), reversed(m_pyr)):
        dims = f_l.shape[::-1]
        phi = identity_field(dims, np.float64) if phi is None else resize_field(phi, dims)
        u, _ = _descend(_Objective(f_l, m_l, cfg), phi.vectors.copy(), cfg)
        phi = DisplacementField(u)
    obj = _Objective(fa, ma, cfg)
    if obj(phi.vectors)[0] > obj(np.zeros_like(phi.vectors))[0]:
        phi = identity_field(f.dims, np.float64)
    return DisplacementField(phi.vectors.astype(np.float32))


# --------------------------------------------------------------------------
# amortized predictor


@dataclass
class RegModel:
    store: ad.ParamStore
    net: EncDecConfig
    dims: tuple
    history: list = field(default_factory=list)

    PREFIX = "reg."


def init_reg_model(dims, cfg: RegConfig, dtype=np.float32) -> RegModel:
    net = EncDecConfig(in_channels=2, out_classes=3, levels=cfg.net_levels, base_channels=cfg.base_channels,
                       head="linear")
    net.check_extents(tuple(dims)[::-1])
    store = ad.ParamStore(dtype)
    init_encdec(store, RegModel.PREFIX, net, np.random.default_rng(cfg.seed), zero_head=True)
    return RegModel(store, net, tuple(dims))


def _pair_tensor(f: np.ndarray, m: np.ndarray, dtype):
    return ad.Tensor(np.stack([f, m]).astype(dtype))


def _field_tensor(model: RegModel, f: np.ndarray, m: np.ndarray):
    return forward_encdec(model.store, RegModel.PREFIX, model.net, _pair_tensor(f, m, model.store.dtype))


def amortized_loss(model: RegModel, f: np.ndarray, m: np.ndarray, cfg: RegConfig) -> ad.Tensor:
    phi = _field_tensor(model, f, m)
    warped = ad.spatial_transform(m[None], phi)
    if cfg.metric == "mse":
        loss = ad.mse(warped, f[None])
    else:
        raise ArgumentError("amortized training supports the mse metric only")
    if cfg.lambda_smooth:
        loss = ad.add(loss, ad.mul(ad.smoothness(phi), cfg.lambda_smooth))
    return loss


def train_amortized(pairs, cfg: RegConfig | None = None, iters: int | None = None) -> RegModel:
    """Fit the field predictor to a list of (fixed, moving) single-channel volume pairs."""
    cfg = cfg or RegConfig(mode="amortized")
    if cfg.mode != "amortized":
        raise ArgumentError("train_amortized requires cfg.mode == 'amortized'")
    if not pairs:
        raise ArgumentError("train_amortized needs at least one (fixed, moving) pair")
    dims = pairs[0][0].dims
    for f, m in pairs:
        if f.dims != dims or m.dims != dims:
            raise ArgumentError(f"all pairs must share one grid; got {f.dims} / {m.dims} vs {dims}")
    arrays = [(_single_channel(f, "fixed image"), _single_channel(m, "moving image")) for f, m in pairs]
    model = init_reg_model(dims, cfg)
    iters = cfg.train_iters if iters is None else iters
    sgd = ad.SgdConfig(lr0=cfg.lr, momentum=0.9, weight_decay=0.0, total_steps=iters)
    rng = np.random.default_rng(cfg.seed)
    order = []
    for step in range(iters):
        if not order:
            order = list(rng.permutation(len(arrays)))
        f, m = arrays[order.pop()]
        loss = amortized_loss(model, f, m, cfg)
        model.history.append(float(loss.data))
        ad.backward(loss, model.store)
        ad.sgd_step(model.store, sgd, step)
    return model


def predict_field(model: RegModel, f: Volume3, m: Volume3) -> DisplacementField:
    check_same_dims(f, m)
    if f.dims != model.dims:
        raise ArgumentError(f"model was trained on grid {model.dims}, got {f.dims}")
    phi = _field_tensor(model, _single_channel(f, "fixed image"), _single_channel(m, "moving image"))
    return DisplacementField(phi.data)


def register(f: Volume3, m: Volume3, cfg: RegConfig | None = None) -> DisplacementField:
    """Register with the configured mode; amortized mode fits the predictor on this one pair."""
    cfg = cfg or RegConfig()
    if cfg.mode == "direct":
        return register_direct(f, m, cfg)
    return predict_field(train_amortized([(f, m)], cfg), f, m)
