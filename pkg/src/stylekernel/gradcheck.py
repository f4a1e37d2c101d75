"""Central finite-difference checks against the tape's analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor], index: int, flat_ids, eps: float):
    x = inputs[index].data
    flat = x.reshape(-1)
    out = np.zeros(len(flat_ids), dtype=np.float64)
    for n, i in enumerate(flat_ids):
        orig = flat[i]
        flat[i] = orig + eps
        fp = fn(*inputs).item()
        flat[i] = orig - eps
        fm = fn(*inputs).item()
        flat[i] = orig
        out[n] = (fp - fm) / (2 * eps)
    return out


def grad_check(fn: Callable[..., Tensor], x, eps: float = 1e-4,
               max_elements: int | None = None, seed: int = 0) -> float:
    """Max relative error between backward() and central differences.

    ``x`` is a tensor or a sequence of tensors passed positionally to ``fn``;
    all of them are checked. The error per element is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``. With
    ``max_elements`` only a random subset of each input is probed.
    """
    inputs = [x] if isinstance(x, Tensor) else list(x)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    if out.size != 1:
        raise ValueError(f"grad_check needs a scalar-valued fn, got shape {out.shape}")
    out.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k, t in enumerate(inputs):
        analytic = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
        ids = np.arange(t.size)
        if max_elements is not None and t.size > max_elements:
            ids = rng.choice(t.size, size=max_elements, replace=False)
        numeric = numeric_grad(fn, inputs, k, ids, eps)
        a = analytic[ids].astype(np.float64)
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(numeric)))
        if len(ids):
            worst = max(worst, float(np.max(np.abs(a - numeric) / denom)))
    return worst
