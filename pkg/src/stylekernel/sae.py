"""Style alignment encoding: multi-head cosine attention with content gating.

Each head attends from content positions (queries) to style positions
(keys/values). A small conv net over the content feature produces a per-query
scale and bias; entries of the attention row that do not exceed
``scale * row_mean + bias`` are zeroed before aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import conv, conv_params
from .tensor import Tensor

COS_EPS = 1e-8


@dataclass
class SaeWeights:
    params: dict[str, Tensor]
    heads: int = 8
    alpha: float = 10.0
    shared_cgm: bool = False

    @property
    def channels(self) -> int:
        return self.params["q.weight"].shape[0]


@dataclass
class CgmParams:
    """Per-query scale ``lam`` and bias ``beta``, each N_c x G."""
    lam: Tensor
    beta: Tensor

    @property
    def shape(self) -> tuple:
        return self.lam.shape + (2,)


def init_sae(rng: np.random.Generator, channels: int = 512, heads: int = 8, alpha: float = 10.0,
             shared_cgm: bool = False, proj_kernel: int = 3, hidden: int | None = None,
             dtype=np.float32) -> SaeWeights:
    if channels % heads:
        raise ValueError(f"channels {channels} not divisible by heads {heads}")
    hidden = hidden or max(channels // 4, 1)
    params: dict[str, Tensor] = {}
    for name in ("q", "k", "v"):
        params.update(conv_params(rng, name, channels, channels, proj_kernel, gain=1.0, dtype=dtype))
    n_out = 2 if shared_cgm else 2 * heads
    params.update(conv_params(rng, "psi.0", hidden, channels, 3, dtype=dtype))
    params.update(conv_params(rng, "psi.1", hidden, hidden, 3, dtype=dtype))
    # zero last layer: threshold starts at 0, so nothing is masked at init
    params.update(conv_params(rng, "psi.2", n_out, hidden, 3, dtype=dtype, zero=True))
    return SaeWeights(params, heads=heads, alpha=alpha, shared_cgm=shared_cgm)


def _as_matrix(x: Tensor) -> Tensor:
    if x.ndim == 3:
        return T.reshape(x, (x.shape[0] * x.shape[1], x.shape[2]))
    if x.ndim == 2:
        return x
    raise ValueError(f"expected a feature map or N x C matrix, got shape {x.shape}")


def alignment_attention(zc: Tensor, zs: Tensor, alpha: float) -> Tensor:
    """softmax over style positions of ``alpha * cos(zc[u], zs[v])``; N_c x N_s."""
    q, k = _as_matrix(zc), _as_matrix(zs)
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"attention channel mismatch: query has {q.shape[1]}, key has {k.shape[1]}")
    cos = T.matmul(T.normalize_rows(q, COS_EPS), T.transpose(T.normalize_rows(k, COS_EPS)))
    return T.softmax_rows(T.mul(cos, alpha))


def cgm_params(zc: Tensor, w: SaeWeights) -> CgmParams:
    C = w.channels
    if zc.ndim != 3 or zc.shape[2] != C:
        raise ValueError(f"cgm_params expects an H x W x {C} content feature, got {zc.shape}")
    h = T.relu(conv(zc, w.params, "psi.0"))
    h = T.relu(conv(h, w.params, "psi.1"))
    out = conv(h, w.params, "psi.2")
    n = zc.shape[0] * zc.shape[1]
    out = T.reshape(out, (n, out.shape[2]))
    if w.shared_cgm:
        lam = T.expand(out[:, 0:1], (n, w.heads))
        beta = T.expand(out[:, 1:2], (n, w.heads))
    else:
        lam = out[:, :w.heads]
        beta = out[:, w.heads:]
    return CgmParams(lam, beta)


def cgm_mask(attn: Tensor, lam: Tensor, beta: Tensor) -> Tensor:
    """Zero every entry not strictly above its row threshold.

    ``lam`` and ``beta`` hold one value per query row. The threshold is
    ``lam * mean(row) + beta``; ties are masked.
    """
    n, m = attn.shape
    lam = T.reshape(lam, (n,))
    beta = T.reshape(beta, (n,))
    row_mean = T.mean(attn, axis=1)
    tau = T.add(T.mul(lam, row_mean), beta)
    thresh = T.expand(T.reshape(tau, (n, 1)), (n, m))
    return T.mul(attn, T.sign(T.sub(attn, thresh)))


def aggregate(attn: Tensor, values: Tensor) -> Tensor:
    """Weighted sum of value vectors per query row; returns N_c x C."""
    v = _as_matrix(values)
    if attn.shape[1] != v.shape[0]:
        raise ValueError(f"aggregate: attention has {attn.shape[1]} columns but values have {v.shape[0]} rows")
    return T.matmul(attn, v)


def sae_forward(zc: Tensor, zs: Tensor, w: SaeWeights, return_maps: bool = False):
    """Aligned feature Z_cs on the content grid (H_c x W_c x C)."""
    C, G = zc.shape[2], w.heads
    if C % G:
        raise ValueError(f"channel count {C} not divisible by head count {G}")
    if zs.shape[2] != C:
        raise ValueError(f"content has {C} channels but style has {zs.shape[2]}")
    Hc, Wc = zc.shape[:2]
    d = C // G
    q = _as_matrix(conv(T.instance_normalize(zc), w.params, "q"))
    k = _as_matrix(conv(T.instance_normalize(zs), w.params, "k"))
    v = _as_matrix(conv(zs, w.params, "v"))
    gate = cgm_params(zc, w)
    outs, maps = [], []
    for h in range(G):
        cols = slice(h * d, (h + 1) * d)
        attn = alignment_attention(q[:, cols], k[:, cols], w.alpha)
        masked = cgm_mask(attn, gate.lam[:, h], gate.beta[:, h])
        outs.append(aggregate(masked, v[:, cols]))
        if return_maps:
            maps.append((attn, masked))
    zcs = T.reshape(T.concat(outs, axis=1), (Hc, Wc, C))
    return (zcs, maps) if return_maps else zcs
