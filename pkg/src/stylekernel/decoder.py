"""Residual upsampling decoder: three (ResBlock, 2x upsample) stages, conv, tanh."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import conv, conv_params
from .tensor import Tensor

STAGES = 3


@dataclass
class DecoderWeights:
    params: dict[str, Tensor]

    @property
    def channels(self) -> int:
        return self.params["res0.conv1.weight"].shape[1]


def init_decoder(rng: np.random.Generator, channels: int = 512, dtype=np.float32) -> DecoderWeights:
    if channels % 8:
        raise ValueError(f"decoder input channels {channels} not divisible by 8")
    params: dict[str, Tensor] = {}
    cin = channels
    for s in range(STAGES):
        cout = cin // 2
        params.update(conv_params(rng, f"res{s}.conv1", cout, cin, 3, dtype=dtype))
        params.update(conv_params(rng, f"res{s}.conv2", cout, cout, 3, dtype=dtype))
        params.update(conv_params(rng, f"res{s}.skip", cout, cin, 1, gain=1.0, dtype=dtype))
        cin = cout
    params.update(conv_params(rng, "out", 3, cin, 3, gain=1.0, dtype=dtype))
    return DecoderWeights(params)


def res_block(x: Tensor, params, name: str) -> Tensor:
    h = conv(T.relu(x), params, f"{name}.conv1")
    h = conv(T.relu(h), params, f"{name}.conv2")
    return T.add(h, conv(x, params, f"{name}.skip"))


def decode(zbar: Tensor, w: DecoderWeights) -> Tensor:
    """h x w x C feature -> 8h x 8w x 3 image in (-1, 1)."""
    if zbar.ndim != 3:
        raise ValueError(f"decode expects an H x W x C feature map, got {zbar.shape}")
    if zbar.shape[2] % 8:
        raise ValueError(f"decode: channel count {zbar.shape[2]} not divisible by 8")
    if zbar.shape[2] != w.channels:
        raise ValueError(f"decode: input has {zbar.shape[2]} channels, weights expect {w.channels}")
    x = zbar
    for s in range(STAGES):
        x = T.upsample_nearest2x(res_block(x, w.params, f"res{s}"))
    return T.tanh(conv(T.relu(x), w.params, "out"))


def to_image(x, stats: dict | None = None) -> np.ndarray:
    """Map values in [-1, 1] to uint8, rounding half away from zero.

    Out-of-range values are clamped; the number clamped is added to
    ``stats["clamped"]`` when a dict is given.
    """
    arr = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    bad = (arr < -1) | (arr > 1) | ~np.isfinite(arr)
    n_bad = int(bad.sum())
    if n_bad:
        warnings.warn(f"to_image: clamped {n_bad} out-of-range values", RuntimeWarning, stacklevel=2)
        arr = np.clip(np.nan_to_num(arr, nan=0.0), -1, 1)
    if stats is not None:
        stats["clamped"] = stats.get("clamped", 0) + n_bad
    scaled = (arr + 1.0) * 127.5
    return np.floor(scaled + 0.5).astype(np.uint8)


def from_image(pixels: np.ndarray, dtype=np.float32) -> np.ndarray:
    return (np.asarray(pixels, dtype=np.float64) / 127.5 - 1.0).astype(dtype)
