"""Style kernel generation and per-pixel separable modulation.

The prediction net maps Z_cs to ``C * (2k + 1)`` channels per position,
split as ``[F1 (C*k) | F2 (C*k) | B (C)]``. The content feature is
instance-normalised, its channel groups shuffled, and every output scalar
``(i, j, c)`` is produced by the k x 1 and 1 x k filters predicted *at*
``(i, j)`` applied to the k x k neighbourhood, plus the predicted bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import conv, conv_params
from .tensor import Tensor, _make

SHUFFLE_GROUPS = 8


@dataclass
class SkgWeights:
    params: dict[str, Tensor]
    k: int = 3

    @property
    def channels(self) -> int:
        return self.params["phi.0.weight"].shape[1]


@dataclass
class DynamicKernels:
    f1: Tensor  # H x W x C x k, vertical taps
    f2: Tensor  # H x W x C x k, horizontal taps
    bias: Tensor  # H x W x C x 1

    @property
    def k(self) -> int:
        return self.f1.shape[3]


@dataclass(frozen=True)
class GroupPermutation:
    order: tuple
    seed: int | None = None

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.order))):
            raise ValueError(f"not a permutation of 0..{len(self.order) - 1}: {self.order}")

    @classmethod
    def identity(cls, groups: int = SHUFFLE_GROUPS) -> "GroupPermutation":
        return cls(tuple(range(groups)))

    @classmethod
    def random(cls, rng: np.random.Generator, groups: int = SHUFFLE_GROUPS) -> "GroupPermutation":
        return cls(tuple(int(i) for i in rng.permutation(groups)))

    @classmethod
    def from_seed(cls, seed: int, groups: int = SHUFFLE_GROUPS) -> "GroupPermutation":
        return cls(cls.random(np.random.default_rng(seed), groups).order, seed)

    def inverse(self) -> "GroupPermutation":
        return GroupPermutation(tuple(int(i) for i in np.argsort(self.order)))


def _check_k(k: int):
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size k must be odd and >= 1, got {k}")


def init_skg(rng: np.random.Generator, channels: int = 512, k: int = 3, hidden: int | None = None,
             head_scale: float = 0.1, dtype=np.float32) -> SkgWeights:
    """Two 3x3 conv blocks; the output bias is set so kernels start as identity taps."""
    _check_k(k)
    hidden = hidden or max(channels // 4, 1)
    params: dict[str, Tensor] = {}
    params.update(conv_params(rng, "phi.0", hidden, channels, 3, dtype=dtype))
    params.update(conv_params(rng, "phi.1", channels * (2 * k + 1), hidden, 3, gain=head_scale, dtype=dtype))
    bias = np.zeros(channels * (2 * k + 1), dtype=dtype)
    centre = np.arange(channels) * k + k // 2
    bias[centre] = 1.0
    bias[channels * k + centre] = 1.0
    params["phi.1.bias"] = Tensor(bias)
    return SkgWeights(params, k=k)


def predict_kernels(zcs: Tensor, w: SkgWeights, k: int | None = None) -> DynamicKernels:
    k = w.k if k is None else k
    _check_k(k)
    if zcs.ndim != 3 or zcs.shape[2] != w.channels:
        raise ValueError(f"predict_kernels expects H x W x {w.channels}, got {zcs.shape}")
    H, W, C = zcs.shape
    out = conv(T.relu(conv(zcs, w.params, "phi.0")), w.params, "phi.1")
    if out.shape[2] != C * (2 * k + 1):
        raise ValueError(f"prediction has {out.shape[2]} channels, expected {C * (2 * k + 1)} for k={k}")
    f1 = T.reshape(out[:, :, :C * k], (H, W, C, k))
    f2 = T.reshape(out[:, :, C * k:2 * C * k], (H, W, C, k))
    bias = T.reshape(out[:, :, 2 * C * k:], (H, W, C, 1))
    return DynamicKernels(f1, f2, bias)


def group_channel_order(channels: int, perm: GroupPermutation) -> np.ndarray:
    groups = len(perm.order)
    if channels % groups:
        raise ValueError(f"channel count {channels} not divisible by {groups} groups")
    size = channels // groups
    return np.concatenate([np.arange(g * size, (g + 1) * size) for g in perm.order])


def grouped_shuffle(zc: Tensor, perm: GroupPermutation) -> Tensor:
    """Re-concatenate the 8 contiguous channel groups in ``perm`` order."""
    return T.take(zc, group_channel_order(zc.shape[2], perm), axis=2)


def _dynamic_sepconv(x: Tensor, f1: Tensor, f2: Tensor, bias: Tensor, counter: dict | None) -> Tensor:
    H, W, C = x.shape
    k = f1.shape[3]
    r = k // 2
    xp = np.pad(x.data, ((r, r), (r, r), (0, 0)))
    # patches[i, j, c, a, b] = xp[i + a, j + b, c]
    patches = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(0, 1))
    # vertical pass with the (i, j) filter, one column offset b at a time
    inter = np.einsum("hwcab,hwca->hwcb", patches, f1.data, optimize=True)
    out = np.einsum("hwcb,hwcb->hwc", inter, f2.data) + bias.data[..., 0]
    if counter is not None:
        interior = max(H - 2 * r, 0) * max(W - 2 * r, 0) * C
        counter["vertical"] = counter.get("vertical", 0) + interior * k * k
        counter["horizontal"] = counter.get("horizontal", 0) + interior * k
        counter["bias"] = counter.get("bias", 0) + interior
        counter["outputs"] = counter.get("outputs", 0) + interior

    def bw(g):
        gx = gf1 = gf2 = gb = None
        if f2.requires_grad:
            gf2 = inter * g[..., None]
        if bias.requires_grad:
            gb = g[..., None].copy()
        if x.requires_grad or f1.requires_grad:
            ginter = g[..., None] * f2.data  # h w c b
            if f1.requires_grad:
                gf1 = np.einsum("hwcb,hwcab->hwca", ginter, patches, optimize=True)
            if x.requires_grad:
                gxp = np.zeros(xp.shape, dtype=x.dtype)
                for a in range(k):
                    for b in range(k):
                        gxp[a:a + H, b:b + W] += ginter[..., b] * f1.data[..., a]
                gx = np.ascontiguousarray(gxp[r:r + H, r:r + W])
        return gx, gf1, gf2, gb
    return _make(out.astype(x.dtype), "dynamic_sepconv", (x, f1, f2, bias), bw)


def _cascade_sepconv(x: Tensor, f1: Tensor, f2: Tensor, bias: Tensor, counter: dict | None) -> Tensor:
    H, W, C = x.shape
    k = f1.shape[3]
    r = k // 2
    xv = np.pad(x.data, ((r, r), (0, 0), (0, 0)))
    col = np.lib.stride_tricks.sliding_window_view(xv, k, axis=0)  # h w c a
    inter = (col * f1.data).sum(axis=3)
    ih = np.pad(inter, ((0, 0), (r, r), (0, 0)))
    row = np.lib.stride_tricks.sliding_window_view(ih, k, axis=1)  # h w c b
    out = (row * f2.data).sum(axis=3) + bias.data[..., 0]
    if counter is not None:
        interior = max(H - 2 * r, 0) * max(W - 2 * r, 0) * C
        counter["vertical"] = counter.get("vertical", 0) + interior * k
        counter["horizontal"] = counter.get("horizontal", 0) + interior * k
        counter["bias"] = counter.get("bias", 0) + interior
        counter["outputs"] = counter.get("outputs", 0) + interior

    def bw(g):
        gf2 = row * g[..., None] if f2.requires_grad else None
        gb = g[..., None].copy() if bias.requires_grad else None
        gih = np.zeros(ih.shape, dtype=x.dtype)
        gterm = g[..., None] * f2.data
        for b in range(k):
            gih[:, b:b + W] += gterm[..., b]
        ginter = gih[:, r:r + W]
        gf1 = col * ginter[..., None] if f1.requires_grad else None
        gx = None
        if x.requires_grad:
            gxv = np.zeros(xv.shape, dtype=x.dtype)
            gterm = ginter[..., None] * f1.data
            for a in range(k):
                gxv[a:a + H] += gterm[..., a]
            gx = np.ascontiguousarray(gxv[r:r + H])
        return gx, gf1, gf2, gb
    return _make(out.astype(x.dtype), "cascade_sepconv", (x, f1, f2, bias), bw)


def dynamic_separable_conv(zc: Tensor, kernels: DynamicKernels, normalize: bool = True,
                           mode: str = "gather", counter: dict | None = None) -> Tensor:
    """Modulate ``zc`` with per-pixel separable kernels (zero padding at borders).

    ``mode="gather"`` uses only the filters predicted at the output position,
    so each output equals the k x k outer-product kernel of that position
    applied to its neighbourhood. ``mode="cascade"`` runs the vertical pass
    everywhere first and lets the horizontal pass read neighbouring
    intermediates, each built with its own position's vertical filter.
    ``counter`` (a dict) accumulates multiply-accumulates over interior outputs.
    """
    if zc.ndim != 3:
        raise ValueError(f"expected an H x W x C feature map, got {zc.shape}")
    H, W, C = zc.shape
    k = kernels.k
    _check_k(k)
    for name, t, last in (("F1", kernels.f1, k), ("F2", kernels.f2, k), ("B", kernels.bias, 1)):
        if t.shape != (H, W, C, last):
            raise ValueError(f"kernel {name} has shape {t.shape}, expected {(H, W, C, last)}")
    x = T.instance_normalize(zc) if normalize else zc
    if mode == "gather":
        return _dynamic_sepconv(x, kernels.f1, kernels.f2, kernels.bias, counter)
    if mode == "cascade":
        return _cascade_sepconv(x, kernels.f1, kernels.f2, kernels.bias, counter)
    raise ValueError(f"unknown mode {mode!r}")


def flops_dynamic(h: int, w: int, c: int, k: int) -> int:
    """Multiply-accumulates of the separable style kernel: H*W*C*(2k+1)."""
    return h * w * c * (2 * k + 1)


def flops_vanilla(h: int, w: int, c_in: int, c_out: int, k: int) -> int:
    """Multiply-accumulates of a dense k x k conv: H*W*C_out*(C_in*k*k+1)."""
    return h * w * c_out * (c_in * k * k + 1)
