"""Parameter initialisation and conv helpers shared by the networks."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import tensor as T
from .tensor import Tensor


def conv_params(rng: np.random.Generator, name: str, cout: int, cin: int, k: int,
                gain: float = np.sqrt(2.0), dtype=np.float32, zero: bool = False) -> dict[str, Tensor]:
    """Gaussian conv weights with std ``gain / sqrt(fan_in)`` and zero bias."""
    if zero:
        w = np.zeros((cout, cin, k, k))
    else:
        w = rng.standard_normal((cout, cin, k, k)) * (gain / np.sqrt(cin * k * k))
    return {
        f"{name}.weight": Tensor(w.astype(dtype)),
        f"{name}.bias": Tensor(np.zeros(cout, dtype=dtype)),
    }


def conv(x: Tensor, params: Mapping[str, Tensor], name: str, stride: int = 1, pad: int | None = None) -> Tensor:
    w = params[f"{name}.weight"]
    if pad is None:
        pad = w.shape[2] // 2
    return T.conv2d(x, w, params[f"{name}.bias"], stride=stride, pad=pad)


def cast(params: Mapping[str, Tensor], dtype) -> dict[str, Tensor]:
    return {k: Tensor(v.data.astype(dtype)) for k, v in params.items()}


def to_arrays(params: Mapping[str, Tensor], prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: v.data for k, v in params.items()}


def from_arrays(arrays: Mapping[str, np.ndarray], prefix: str = "", dtype=np.float32) -> dict[str, Tensor]:
    n = len(prefix)
    return {k[n:]: Tensor(np.array(v, dtype=dtype)) for k, v in arrays.items() if k.startswith(prefix)}
