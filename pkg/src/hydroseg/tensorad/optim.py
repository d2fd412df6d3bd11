from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ArgumentError, NumericalError
from .params import ParamStore


@dataclass
class SgdConfig:
    """Momentum SGD with L2 weight decay and polynomial learning-rate decay."""

    lr0: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 1e-4
    power: float = 0.9
    total_steps: int | None = None
    # global gradient-norm clipping, off when None
    clip_norm: float | None = None
    # linear ramp from lr0/warmup_steps up to lr0 over the first steps
    warmup_steps: int = 0

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ArgumentError(f"lr0 must be positive, got {self.lr0}")
        if not 0 <= self.momentum < 1:
            raise ArgumentError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ArgumentError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.warmup_steps < 0:
            raise ArgumentError(f"warmup_steps must be >= 0, got {self.warmup_steps}")

    def lr(self, step: int) -> float:
        ramp = min(1.0, (max(step, 0) + 1) / self.warmup_steps) if self.warmup_steps else 1.0
        if not self.total_steps:
            return self.lr0 * ramp
        frac = min(max(step, 0), self.total_steps) / self.total_steps
        return self.lr0 * ramp * (1 - frac) ** self.power


def sgd_step(store: ParamStore, cfg: SgdConfig, step_index: int) -> None:
    lr = cfg.lr(step_index)
    for name, p in store.items():
        if not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient for parameter {name}")
    scale = 1.0
    if cfg.clip_norm:
        norm = np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in store.params.values()))
        if norm > cfg.clip_norm:
            scale = cfg.clip_norm / norm
    for name, p in store.items():
        v = store.momentum[name]
        v *= cfg.momentum
        v += p.grad if scale == 1.0 else scale * p.grad
        if cfg.weight_decay:
            v += cfg.weight_decay * p.data
        p.data -= lr * v
        p.zero_grad()
