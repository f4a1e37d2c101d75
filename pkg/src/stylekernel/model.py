"""The style-kernel generator: SAE -> kernel prediction -> modulation -> decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from . import weightstore
from .decoder import DecoderWeights, decode, init_decoder
from .sae import SaeWeights, init_sae, sae_forward
from .skg import GroupPermutation, SkgWeights, dynamic_separable_conv, grouped_shuffle, init_skg, predict_kernels
from .tensor import Tensor

PARTS = ("sae", "skg", "decoder")


@dataclass
class StyleKernelNet:
    sae: SaeWeights
    skg: SkgWeights
    decoder: DecoderWeights

    @property
    def k(self) -> int:
        return self.skg.k

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for part in PARTS:
            for name, t in getattr(self, part).params.items():
                out[f"{part}.{name}"] = t
        return out

    def to_arrays(self, prefix: str = "gen.") -> dict[str, np.ndarray]:
        out = {prefix + k: v.data for k, v in self.parameters().items()}
        out[prefix + "meta.k"] = np.array([self.skg.k], dtype=np.float32)
        out[prefix + "meta.heads"] = np.array([self.sae.heads], dtype=np.float32)
        out[prefix + "meta.alpha"] = np.array([self.sae.alpha], dtype=np.float32)
        out[prefix + "meta.shared_cgm"] = np.array([float(self.sae.shared_cgm)], dtype=np.float32)
        return out


def init_model(rng: np.random.Generator, channels: int = 512, k: int = 3, heads: int = 8,
               alpha: float = 10.0, shared_cgm: bool = False, dtype=np.float32, **sizes) -> StyleKernelNet:
    """Fresh generator. ``sizes`` may set ``sae_hidden``, ``skg_hidden`` and ``proj_kernel``."""
    sae = init_sae(rng, channels, heads, alpha, shared_cgm, proj_kernel=sizes.get("proj_kernel", 3),
                   hidden=sizes.get("sae_hidden"), dtype=dtype)
    skg = init_skg(rng, channels, k, hidden=sizes.get("skg_hidden"), dtype=dtype)
    dec = init_decoder(rng, channels, dtype=dtype)
    return StyleKernelNet(sae, skg, dec)


def from_arrays(arrays, prefix: str = "gen.") -> StyleKernelNet:
    sub = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
    for key in ("meta.k", "meta.heads", "meta.alpha", "meta.shared_cgm"):
        if key not in sub:
            raise weightstore.MissingTensorError(f"generator: missing tensor {prefix + key!r}")
    parts = {p: {} for p in PARTS}
    for name, arr in sub.items():
        head, _, rest = name.partition(".")
        if head in parts:
            parts[head][rest] = Tensor(np.array(arr, dtype=np.float32))
    k = int(sub["meta.k"][0])
    model = StyleKernelNet(
        SaeWeights(parts["sae"], heads=int(sub["meta.heads"][0]), alpha=float(sub["meta.alpha"][0]),
                   shared_cgm=bool(sub["meta.shared_cgm"][0])),
        SkgWeights(parts["skg"], k=k),
        DecoderWeights(parts["decoder"]),
    )
    _validate(model)
    return model


def _validate(model: StyleKernelNet) -> None:
    try:
        C = model.sae.channels
        expected = {
            "sae.q.weight": (C, C) + model.sae.params["q.weight"].shape[2:],
            "skg.phi.1.bias": (C * (2 * model.k + 1),),
            "decoder.res0.conv1.weight": (C // 2, C, 3, 3),
            "decoder.out.weight": (3, C // 8, 3, 3),
        }
    except KeyError as e:
        raise weightstore.MissingTensorError(f"generator: missing tensor {e}") from None
    weightstore.expect_shapes({k: v.data for k, v in model.parameters().items()}, expected, "generator")


def align(model: StyleKernelNet, zc: Tensor, zs: Tensor) -> Tensor:
    return sae_forward(zc, zs, model.sae)


def render(model: StyleKernelNet, zc: Tensor, zcs: Tensor, perm: GroupPermutation | None = None,
           mode: str = "gather") -> Tensor:
    """Kernels from ``zcs``, modulation of the shuffled ``zc``, decode to [-1, 1]."""
    kernels = predict_kernels(zcs, model.skg)
    shuffled = grouped_shuffle(zc, perm or GroupPermutation.identity())
    zbar = dynamic_separable_conv(shuffled, kernels, mode=mode)
    return decode(zbar, model.decoder)


def generate(model: StyleKernelNet, zc: Tensor, zs: Tensor, perm: GroupPermutation | None = None):
    """Returns ``(image, zcs)`` for encoded content ``zc`` and style ``zs``."""
    zcs = align(model, zc, zs)
    return render(model, zc, zcs, perm), zcs


def blend(zcs_a: Tensor, zcs_b: Tensor, alpha: float) -> Tensor:
    """alpha * zcs_a + (1 - alpha) * zcs_b."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"interpolation alpha must lie in [0, 1], got {alpha}")
    return T.add(T.mul(zcs_a, alpha), T.mul(zcs_b, 1.0 - alpha))
