"""Position attention over the voxels of a feature map.

For a feature map A of shape (Cin, D, H, W) with N = D*H*W positions::

    B = W_B * A,  C = W_C * A           (C' x N each, C' = max(1, Cin // 8))
    S = rowsoftmax(C^T B)               (N x N)
    E = reshape(W_D * A @ S^T) + A

All three projections are 1x1x1 convolutions, carried out as matrix
products on the flattened map.
"""
from __future__ import annotations

import numpy as np

from .errors import ArgumentError, ResourceError
from .tensorad import ParamStore, Tensor, add, matmul, reshape, softmax, transpose

DEFAULT_CAP = 4096


def reduced_channels(cin: int) -> int:
    return max(1, cin // 8)


def init_position_attention(store: ParamStore, prefix: str, cin: int, rng: np.random.Generator):
    cr = reduced_channels(cin)
    std = np.sqrt(2.0 / cin)
    store.add(prefix + "wb", rng.normal(0, std, (cr, cin, 1, 1, 1)))
    store.add(prefix + "bb", np.zeros(cr))
    store.add(prefix + "wc", rng.normal(0, std, (cr, cin, 1, 1, 1)))
    store.add(prefix + "bc", np.zeros(cr))
    # zero value projection: the module starts out as the identity map
    store.add(prefix + "wd", np.zeros((cin, cin, 1, 1, 1)))
    store.add(prefix + "bd", np.zeros(cin))


class PositionAttention:
    """Stateless view onto attention weights stored under ``prefix`` in a ParamStore.

    ``canonical`` switches every reduction to an order-independent summation
    so that permuting voxel positions permutes the output bit for bit.
    """

    def __init__(self, store: ParamStore, prefix: str = "attn.", cap: int = DEFAULT_CAP, canonical: bool = False):
        self.store = store
        self.prefix = prefix
        self.cap = cap
        self.canonical = canonical

    @classmethod
    def create(cls, cin: int, seed: int = 0, dtype=np.float32, prefix: str = "attn.", **kwargs):
        store = ParamStore(dtype)
        init_position_attention(store, prefix, cin, np.random.default_rng(seed))
        return cls(store, prefix, **kwargs)

    def _p(self, name) -> Tensor:
        return self.store[self.prefix + name]

    def _project(self, flat: Tensor, w: str, b: str) -> Tensor:
        weight = self._p(w)
        w2 = reshape(weight, weight.shape[:2])
        bias = reshape(self._p(b), (weight.shape[0], 1))
        return add(matmul(w2, flat, canonical=self.canonical), bias)

    def _flatten(self, a: Tensor) -> Tensor:
        if a.ndim != 4:
            raise ArgumentError(f"position attention expects a rank-4 (C, D, H, W) tensor, got rank {a.ndim}")
        cin = a.shape[0]
        if cin != self._p("wd").shape[0]:
            raise ArgumentError(f"attention built for {self._p('wd').shape[0]} channels, got {cin}")
        n = int(np.prod(a.shape[1:]))
        if n > self.cap:
            raise ResourceError(f"attention over N = {n} positions exceeds the cap of {self.cap}")
        return reshape(a, (cin, n))

    def _attention(self, flat: Tensor) -> Tensor:
        b = self._project(flat, "wb", "bb")
        c = self._project(flat, "wc", "bc")
        energy = matmul(transpose(c), b, canonical=self.canonical)
        return softmax(energy, axis=1, canonical=self.canonical)

    def attention_map(self, a: Tensor) -> Tensor:
        return self._attention(self._flatten(a))

    def forward(self, a: Tensor) -> Tensor:
        flat = self._flatten(a)
        s = self._attention(flat)
        d = self._project(flat, "wd", "bd")
        out = matmul(d, transpose(s), canonical=self.canonical)
        return add(reshape(out, a.shape), a)

    __call__ = forward
