"""Encoder-decoder FCN shared by the segmenter and the learned registration predictor."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import DEFAULT_CAP, PositionAttention, init_position_attention
from .errors import ArgumentError
from .tensorad import ParamStore, Tensor, concat, conv3, downsample2, relu, softmax, upsample2


@dataclass
class EncDecConfig:
    in_channels: int
    out_classes: int
    levels: int = 3
    base_channels: int = 16
    use_attention: bool = False
    crop_margin: int = 8
    attention_cap: int = DEFAULT_CAP
    head: str = "softmax"

    def __post_init__(self):
        if self.levels < 1 or self.base_channels < 1 or self.in_channels < 1 or self.out_classes < 1:
            raise ArgumentError(f"invalid network config {self}")
        if self.head not in ("softmax", "linear"):
            raise ArgumentError(f"unknown head {self.head!r}")

    @property
    def multiple(self) -> int:
        return 2 ** self.levels

    def width(self, level: int) -> int:
        return self.base_channels * 2 ** level

    def check_extents(self, extents):
        bad = [n for n in extents if n % self.multiple]
        if bad:
            raise ArgumentError(
                f"spatial extents {tuple(extents)} must each be a multiple of {self.multiple} (2^levels)"
            )


def _conv_params(store, name, cin, cout, k, rng, zero=False):
    if zero:
        w = np.zeros((cout, cin, k, k, k))
    else:
        w = rng.normal(0.0, np.sqrt(2.0 / (cin * k ** 3)), (cout, cin, k, k, k))
    store.add(name + ".w", w)
    store.add(name + ".b", np.zeros(cout))


def init_encdec(store: ParamStore, prefix: str, cfg: EncDecConfig, rng: np.random.Generator, zero_head=False):
    cin = cfg.in_channels
    for i in range(cfg.levels):
        w = cfg.width(i)
        _conv_params(store, f"{prefix}enc{i}.c1", cin, w, 3, rng)
        _conv_params(store, f"{prefix}enc{i}.c2", w, w, 3, rng)
        cin = w
    wb = cfg.width(cfg.levels)
    _conv_params(store, f"{prefix}mid.c1", cin, wb, 3, rng)
    _conv_params(store, f"{prefix}mid.c2", wb, wb, 3, rng)
    if cfg.use_attention:
        init_position_attention(store, f"{prefix}attn.", wb, rng)
    below = wb
    for i in reversed(range(cfg.levels)):
        w = cfg.width(i)
        _conv_params(store, f"{prefix}dec{i}.c1", below + w, w, 3, rng)
        _conv_params(store, f"{prefix}dec{i}.c2", w, w, 3, rng)
        below = w
    _conv_params(store, f"{prefix}head", below, cfg.out_classes, 1, rng, zero=zero_head)


def _block(store, name, x):
    return relu(conv3(x, store[name + ".w"], store[name + ".b"], pad=1))


def forward_encdec(store: ParamStore, prefix: str, cfg: EncDecConfig, x: Tensor, canonical=False) -> Tensor:
    """Run the network on a (Cin, D, H, W) tensor.

    Returns per-voxel class probabilities (softmax over axis 0), or raw
    head outputs when ``cfg.head == "linear"``.
    """
    if x.ndim != 4 or x.shape[0] != cfg.in_channels:
        raise ArgumentError(f"expected input of shape ({cfg.in_channels}, D, H, W), got {x.shape}")
    cfg.check_extents(x.shape[1:])
    skips = []
    h = x
    for i in range(cfg.levels):
        h = _block(store, f"{prefix}enc{i}.c1", h)
        h = _block(store, f"{prefix}enc{i}.c2", h)
        skips.append(h)
        h = downsample2(h)
    h = _block(store, f"{prefix}mid.c1", h)
    h = _block(store, f"{prefix}mid.c2", h)
    if cfg.use_attention:
        h = PositionAttention(store, f"{prefix}attn.", cap=cfg.attention_cap, canonical=canonical)(h)
    for i in reversed(range(cfg.levels)):
        h = concat([upsample2(h), skips[i]], axis=0)
        h = _block(store, f"{prefix}dec{i}.c1", h)
        h = _block(store, f"{prefix}dec{i}.c2", h)
    out = conv3(h, store[f"{prefix}head.w"], store[f"{prefix}head.b"])
    if cfg.head == "softmax":
        out = softmax(out, axis=0)
    return out
