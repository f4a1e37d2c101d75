"""Training objective: content, style, reconstruction, REMD and hinge adversarial terms."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from . import tensor as T
from .encoder import TAPS, EncoderWeights, FeaturePyramid, encode
from .layers import conv, conv_params
from .tensor import Tensor

TERMS = ("adv", "rec", "cont", "sty", "remd")


@dataclass
class LossWeights:
    adv: float = 1.0
    rec: float = 1.0
    cont: float = 1.0
    sty: float = 1.0
    remd: float = 3.0
    rec1: float = 20.0
    rec2: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be nonnegative, got {getattr(self, f.name)}")


def signed_features(img: Tensor, encoder: EncoderWeights) -> FeaturePyramid:
    """Encoder pyramid of an image stored in [-1, 1]."""
    return encode(T.mul(T.add(img, 1.0), 0.5), encoder)


def _check_same(a: Tensor, b: Tensor, what: str):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def content_loss(ics_feats: FeaturePyramid, ic_feats: FeaturePyramid) -> Tensor:
    total = None
    for tap in ("relu4_1", "relu5_1"):
        a, b = getattr(ics_feats, tap), getattr(ic_feats, tap)
        _check_same(a, b, f"content_loss at {tap}")
        term = T.mse(T.instance_normalize(a), T.instance_normalize(b))
        total = term if total is None else T.add(total, term)
    return total


def _gram(x: Tensor) -> Tensor:
    H, W, C = x.shape
    m = T.reshape(x, (H * W, C))
    return T.mul(T.matmul(T.transpose(m), m), 1.0 / (H * W))


def style_loss(ics_feats: FeaturePyramid, is_feats: FeaturePyramid, kind: str = "meanstd") -> Tensor:
    """Sum over taps of squared differences of channel means and stds.

    ``kind="gram"`` compares Gram matrices (mean squared difference) instead.
    """
    total = None
    for tap in TAPS:
        a, b = getattr(ics_feats, tap), getattr(is_feats, tap)
        if a.shape[2] != b.shape[2]:
            raise ValueError(f"style_loss at {tap}: channel mismatch {a.shape[2]} vs {b.shape[2]}")
        if kind == "meanstd":
            mu_a, sd_a = T.instance_norm_stats(a)
            mu_b, sd_b = T.instance_norm_stats(b)
            term = T.add(T.sum_(T.square(T.sub(mu_a, mu_b))), T.sum_(T.square(T.sub(sd_a, sd_b))))
        elif kind == "gram":
            term = T.mse(_gram(a), _gram(b))
        else:
            raise ValueError(f"unknown style loss kind {kind!r}")
        total = term if total is None else T.add(total, term)
    return total


def reconstruction_loss(icc: Tensor, iss: Tensor, ic: Tensor, is_: Tensor, encoder: EncoderWeights,
                        rec1: float = 20.0, rec2: float = 0.5,
                        feats: Mapping[str, FeaturePyramid] | None = None) -> Tensor:
    """Pixel and multi-tap feature reconstruction for identity pairs.

    Images are in [-1, 1]. ``feats`` may carry precomputed pyramids under the
    keys ``"icc"``, ``"iss"``, ``"ic"``, ``"is"``.
    """
    _check_same(icc, ic, "reconstruction_loss (content)")
    _check_same(iss, is_, "reconstruction_loss (style)")
    feats = dict(feats or {})
    for key, img in (("icc", icc), ("iss", iss), ("ic", ic), ("is", is_)):
        if key not in feats:
            feats[key] = signed_features(img, encoder)
    pixel = T.add(T.mse(icc, ic), T.mse(iss, is_))
    feat = None
    for tap in TAPS:
        term = T.add(T.mse(getattr(feats["icc"], tap), getattr(feats["ic"], tap)),
                     T.mse(getattr(feats["iss"], tap), getattr(feats["is"], tap)))
        feat = term if feat is None else T.add(feat, term)
    return T.add(T.mul(pixel, rec1), T.mul(feat, rec2))


def remd_loss(zcs: Tensor, zs: Tensor) -> Tensor:
    """Relaxed EMD over cosine distances between two sets of feature vectors."""
    a = T.reshape(zcs, (-1, zcs.shape[-1])) if zcs.ndim == 3 else zcs
    b = T.reshape(zs, (-1, zs.shape[-1])) if zs.ndim == 3 else zs
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"remd_loss: channel mismatch {a.shape[1]} vs {b.shape[1]}")
    cost = T.sub(1.0, T.matmul(T.normalize_rows(a), T.transpose(T.normalize_rows(b))))
    forward = T.mean(T.min_(cost, axis=1))
    backward = T.mean(T.min_(cost, axis=0))
    return T.maximum(forward, backward)


# ---------------------------------------------------------------------------
# discriminator
# ---------------------------------------------------------------------------

@dataclass
class DiscriminatorWeights:
    params: dict[str, Tensor]
    scales: int = 2
    depth: int = 3


def init_discriminator(rng: np.random.Generator, widths=(64, 128, 256), scales: int = 2,
                       dtype=np.float32) -> DiscriminatorWeights:
    params: dict[str, Tensor] = {}
    for s in range(scales):
        cin = 3
        for i, cout in enumerate(widths):
            params.update(conv_params(rng, f"d{s}.conv{i}", cout, cin, 4, dtype=dtype))
            cin = cout
        params.update(conv_params(rng, f"d{s}.logit", 1, cin, 3, gain=1.0, dtype=dtype))
    return DiscriminatorWeights(params, scales=scales, depth=len(widths))


def avg_pool2x2(x: Tensor) -> Tensor:
    H, W, C = x.shape
    return T.mean(T.reshape(x, (H // 2, 2, W // 2, 2, C)), axis=(1, 3))


def discriminate(img: Tensor, D: DiscriminatorWeights) -> list[Tensor]:
    """Patch logit maps, one per scale (full resolution first)."""
    H, W = img.shape[:2]
    if H % 4 or W % 4:
        raise ValueError(f"discriminator input extents {H}x{W} must be divisible by 4")
    outs = []
    x = img
    for s in range(D.scales):
        if s:
            x = avg_pool2x2(x)
        h = x
        for i in range(D.depth):
            h = T.leaky_relu(conv(h, D.params, f"d{s}.conv{i}", stride=2, pad=1))
        outs.append(conv(h, D.params, f"d{s}.logit", pad=1))
    return outs


def adversarial_losses(D: DiscriminatorWeights, real: Tensor, fake: Tensor) -> tuple[Tensor, Tensor]:
    """Hinge losses summed over scales: (generator loss, discriminator loss)."""
    g_loss = d_loss = None
    for lr_, lf in zip(discriminate(real, D), discriminate(fake, D)):
        g = T.neg(T.mean(lf))
        d = T.add(T.mean(T.relu(T.sub(1.0, lr_))), T.mean(T.relu(T.add(lf, 1.0))))
        g_loss = g if g_loss is None else T.add(g_loss, g)
        d_loss = d if d_loss is None else T.add(d_loss, d)
    return g_loss, d_loss


def generator_adv_loss(D: DiscriminatorWeights, fake: Tensor) -> Tensor:
    total = None
    for lf in discriminate(fake, D):
        g = T.neg(T.mean(lf))
        total = g if total is None else T.add(total, g)
    return total


def total_loss(terms: Mapping[str, Tensor], w: LossWeights) -> Tensor:
    missing = [t for t in TERMS if t not in terms]
    if missing:
        raise KeyError(f"total_loss missing terms {missing}")
    total = None
    for name in TERMS:
        part = T.mul(terms[name], getattr(w, name))
        total = part if total is None else T.add(total, part)
    return total
