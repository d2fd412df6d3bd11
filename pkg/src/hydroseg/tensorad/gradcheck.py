"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError
from .core import Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    errors: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tol)

    def __str__(self):
        status = "ok" if self.passed else "FAILED"
        return f"grad_check {status}: max relative error {self.max_rel_error:.3e} (tol {self.tol:g})"


def _rel(analytic, numeric, floor):
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def grad_check(fn, inputs, tol=1e-4, h=1e-5, max_elements=256, n_probes=6, seed=0, floor=1e-6) -> GradCheckReport:
    """Compare analytic gradients of ``fn(*inputs)`` against central differences.

    Small inputs are perturbed element by element. Inputs with more than
    ``max_elements`` entries are checked along ``n_probes`` random unit
    directions instead. The error for one input is the largest absolute
    discrepancy divided by the largest gradient magnitude seen for it, or
    by ``floor`` when the gradient is (mathematically) zero.
    """
    inputs = list(inputs)
    for t in inputs:
        if not isinstance(t, Tensor) or not t.requires_grad:
            raise ArgumentError("grad_check inputs must be tensors with requires_grad=True")
        if t.dtype != np.float64:
            raise ArgumentError("grad_check requires 64-bit tensors")
    for t in inputs:
        t.zero_grad()
    backward(fn(*inputs))
    analytic = [t.grad.copy() for t in inputs]

    def f():
        return float(fn(*inputs).data)

    rng = np.random.default_rng(seed)
    errors = []
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        if flat.size <= max_elements:
            gn = np.empty(flat.size)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                fp = f()
                flat[i] = old - h
                fm = f()
                flat[i] = old
                gn[i] = (fp - fm) / (2 * h)
            errors.append(_rel(ga.reshape(-1), gn, floor))
        else:
            a_dir, n_dir = [], []
            base = t.data.copy()
            for _ in range(n_probes):
                v = rng.standard_normal(t.shape)
                v /= np.linalg.norm(v)
                t.data[...] = base + h * v
                fp = f()
                t.data[...] = base - h * v
                fm = f()
                t.data[...] = base
                a_dir.append(float(np.sum(ga * v)))
                n_dir.append((fp - fm) / (2 * h))
            errors.append(_rel(np.array(a_dir), np.array(n_dir), floor))
    for t in inputs:
        t.zero_grad()
    return GradCheckReport(max(errors) if errors else 0.0, tol, errors)
