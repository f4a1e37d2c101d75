"""Adam, the generator/discriminator training step, and checkpoints."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import encoder as enc_mod
from . import model as model_mod
from . import tensor as T
from . import weightstore
from .config import TrainConfig
from .encoder import EncoderWeights, encode
from .images import random_crop
from .layers import from_arrays as params_from_arrays
from .losses import (DiscriminatorWeights, adversarial_losses, content_loss, generator_adv_loss,
                     init_discriminator, reconstruction_loss, remd_loss, signed_features, style_loss,
                     total_loss)
from .model import StyleKernelNet, generate, init_model
from .skg import GroupPermutation
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor]) -> "AdamState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float) -> None:
    """Bias-corrected Adam, updating ``params`` and ``state`` in place."""
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"adam_step: grad for {name!r} has shape {g.shape}, param has {p.shape}")
        if state.m[name].shape != p.shape:
            raise ValueError(f"adam_step: moment buffer for {name!r} does not match the parameter shape")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        g = g.astype(p.dtype, copy=False)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * np.square(g)
        denom = np.sqrt(v * (1.0 / c2))
        denom += state.eps
        step = m * (lr / c1)
        step /= denom
        p.data = p.data - step


@dataclass
class LossReport:
    step: int
    adv: float
    rec: float
    cont: float
    sty: float
    remd: float
    total: float
    d_loss: float | None = None

    def as_row(self) -> dict:
        return asdict(self)


CSV_HEADER = ("step", "adv", "rec", "cont", "sty", "remd", "total", "d_loss")


class NonFiniteLossError(FloatingPointError):
    pass


def _params_grads(params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}


def _set_trainable(params: Mapping[str, Tensor], flag: bool) -> None:
    for p in params.values():
        p.requires_grad = flag
        p.grad = None


class Trainer:
    """Owns the model, discriminator, optimiser states and the run RNG.

    Every random draw of step ``t`` comes from ``default_rng([seed, t])`` so a
    resumed run replays exactly the draws an uninterrupted run would make.
    """

    def __init__(self, cfg: TrainConfig, encoder: EncoderWeights, model: StyleKernelNet | None = None,
                 disc: DiscriminatorWeights | None = None, dtype=np.float32, **sizes):
        self.cfg = cfg
        self.encoder = encoder
        init_rng = np.random.default_rng(cfg.seed)
        channels = encoder.widths[-1]
        self.model = model or init_model(init_rng, channels, k=cfg.k, heads=cfg.heads, alpha=cfg.alpha,
                                         shared_cgm=cfg.shared_cgm, dtype=dtype, **sizes)
        self.disc = disc or init_discriminator(init_rng, dtype=dtype, **({"widths": sizes["disc_widths"]}
                                                                          if "disc_widths" in sizes else {}))
        self.g_opt = AdamState.for_params(self.model.parameters())
        self.d_opt = AdamState.for_params(self.disc.params)
        self.step = 0
        self.weights = cfg.loss_weights()

    def step_rng(self, step: int) -> np.random.Generator:
        return np.random.default_rng([self.cfg.seed, step])

    def sample_batch(self, contents: Sequence[np.ndarray], styles: Sequence[np.ndarray],
                     rng: np.random.Generator):
        if not contents or not styles:
            raise ValueError("training needs at least one content and one style image")
        B, size = self.cfg.batch_size, self.cfg.crop
        ci = rng.integers(0, len(contents), size=B)
        si = rng.integers(0, len(styles), size=B)
        cb = [random_crop(contents[i], size, rng) for i in ci]
        sb = [random_crop(styles[i], size, rng) for i in si]
        return cb, sb

    def generator_losses(self, content: np.ndarray, style: np.ndarray, perm: GroupPermutation):
        """Loss terms for one (content, style) pair; images in [0, 1]."""
        dtype = self.encoder.dtype
        ic = Tensor(content.astype(dtype))
        is_ = Tensor(style.astype(dtype))
        with T.no_grad():
            fc = encode(ic, self.encoder)
            fs = encode(is_, self.encoder)
        zc, zs = fc.main, fs.main
        ics, zcs = generate(self.model, zc, zs, perm)
        icc, _ = generate(self.model, zc, zc, perm)
        iss, _ = generate(self.model, zs, zs, perm)
        f_ics = signed_features(ics, self.encoder)
        terms = {
            "adv": generator_adv_loss(self.disc, ics),
            "rec": reconstruction_loss(
                icc, iss, Tensor(content.astype(dtype) * 2 - 1), Tensor(style.astype(dtype) * 2 - 1),
                self.encoder, self.weights.rec1, self.weights.rec2,
                feats={"icc": signed_features(icc, self.encoder), "iss": signed_features(iss, self.encoder),
                       "ic": fc, "is": fs}),
            "cont": content_loss(f_ics, fc),
            "sty": style_loss(f_ics, fs, self.cfg.style_loss),
            "remd": remd_loss(zcs, zs),
        }
        return terms, ics

    def train_step(self, contents: Sequence[np.ndarray], styles: Sequence[np.ndarray],
                   perm: GroupPermutation | None = None) -> LossReport:
        """One generator update (and a discriminator update every ``d_every`` steps)."""
        rng = self.step_rng(self.step)
        if perm is None:
            perm = GroupPermutation.random(rng)
        gen_params = self.model.parameters()
        _set_trainable(gen_params, True)
        _set_trainable(self.disc.params, False)
        B = len(contents)
        sums = {}
        fakes = []
        objective = None
        for c, s in zip(contents, styles):
            terms, ics = self.generator_losses(c, s, perm)
            fakes.append(ics.detach())
            for name, t in terms.items():
                val = t.item()
                if not np.isfinite(val):
                    raise NonFiniteLossError(f"step {self.step}: loss term {name!r} is {val}")
                sums[name] = sums.get(name, 0.0) + val / B
            part = T.mul(total_loss(terms, self.weights), 1.0 / B)
            objective = part if objective is None else T.add(objective, part)
        total = objective.item()
        if not np.isfinite(total):
            raise NonFiniteLossError(f"step {self.step}: total loss is {total}")
        objective.backward()
        adam_step(gen_params, _params_grads(gen_params), self.g_opt, self.cfg.lr)
        _set_trainable(gen_params, False)

        d_val = None
        if (self.step + 1) % self.cfg.d_every == 0:
            d_val = self.discriminator_step(styles, fakes)
        report = LossReport(self.step, sums["adv"], sums["rec"], sums["cont"], sums["sty"], sums["remd"],
                            total, d_val)
        self.step += 1
        return report

    def discriminator_step(self, styles: Sequence[np.ndarray], fakes: Sequence[Tensor]) -> float:
        dtype = self.encoder.dtype
        _set_trainable(self.disc.params, True)
        objective = None
        for s, fake in zip(styles, fakes):
            real = Tensor(s.astype(dtype) * 2 - 1)
            _, d_loss = adversarial_losses(self.disc, real, fake)
            part = T.mul(d_loss, 1.0 / len(fakes))
            objective = part if objective is None else T.add(objective, part)
        value = objective.item()
        if not np.isfinite(value):
            raise NonFiniteLossError(f"step {self.step}: discriminator loss is {value}")
        objective.backward()
        adam_step(self.disc.params, _params_grads(self.disc.params), self.d_opt, self.cfg.lr)
        _set_trainable(self.disc.params, False)
        return value

    def fit(self, contents: Sequence[np.ndarray], styles: Sequence[np.ndarray], iterations: int | None = None,
            callback: Callable[[LossReport], None] | None = None) -> list[LossReport]:
        iterations = self.cfg.iterations if iterations is None else iterations
        reports = []
        for _ in range(iterations):
            rng = self.step_rng(self.step)
            perm = GroupPermutation.random(rng)
            cb, sb = self.sample_batch(contents, styles, rng)
            report = self.train_step(cb, sb, perm)
            reports.append(report)
            log.debug("step %d total %.4f", report.step, report.total)
            if callback is not None:
                callback(report)
        return reports

    # -- checkpoints ---------------------------------------------------------
    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = dict(self.encoder.to_arrays())
        arrays["meta.encoder_widths"] = np.array(self.encoder.widths, dtype=np.float32)
        arrays.update(self.model.to_arrays("gen."))
        arrays.update({f"disc.{k}": v.data for k, v in self.disc.params.items()})
        arrays["disc.meta.scales"] = np.array([self.disc.scales], dtype=np.float32)
        for tag, opt in (("gen", self.g_opt), ("disc", self.d_opt)):
            for k in opt.m:
                arrays[f"optimizer.{tag}.m.{k}"] = opt.m[k]
                arrays[f"optimizer.{tag}.v.{k}"] = opt.v[k]
            arrays[f"optimizer.{tag}.step"] = np.array([opt.step], dtype=np.float32)
        arrays["trainer.step"] = np.array([self.step], dtype=np.float32)
        return arrays


def save_checkpoint(trainer: Trainer, path) -> None:
    weightstore.save(trainer.state_arrays(), path)


def _restore_opt(arrays, tag: str, params: Mapping[str, Tensor]) -> AdamState | None:
    step_key = f"optimizer.{tag}.step"
    if step_key not in arrays:
        return None
    state = AdamState(step=int(arrays[step_key][0]))
    for k, p in params.items():
        for slot, store in (("m", state.m), ("v", state.v)):
            key = f"optimizer.{tag}.{slot}.{k}"
            if key not in arrays:
                raise weightstore.MissingTensorError(f"checkpoint: missing optimizer tensor {key!r}")
            if arrays[key].shape != p.shape:
                raise weightstore.ShapeMismatchError(
                    f"checkpoint: optimizer tensor {key!r} has shape {arrays[key].shape}, expected {p.shape}")
            store[k] = arrays[key].copy()
    return state


def _encoder_from(arrays) -> EncoderWeights:
    widths = arrays.get("meta.encoder_widths")
    return enc_mod.from_arrays(arrays, widths=enc_mod.VGG16_WIDTHS if widths is None else widths)


def load_checkpoint(path, cfg: TrainConfig | None = None) -> Trainer:
    """Rebuild a trainer from a checkpoint written by :func:`save_checkpoint`."""
    arrays = weightstore.load(path)
    encoder = _encoder_from(arrays)
    model = model_mod.from_arrays(arrays)
    disc_params = params_from_arrays({k: v for k, v in arrays.items() if not k.startswith("disc.meta.")}, "disc.")
    if not disc_params:
        raise weightstore.MissingTensorError("checkpoint: no discriminator tensors")
    depth = len([k for k in disc_params if k.startswith("d0.conv") and k.endswith(".weight")])
    scales = int(arrays["disc.meta.scales"][0]) if "disc.meta.scales" in arrays else 2
    disc = DiscriminatorWeights(disc_params, scales=scales, depth=depth)
    if cfg is None:
        cfg = TrainConfig(k=model.k, heads=model.sae.heads, alpha=model.sae.alpha, shared_cgm=model.sae.shared_cgm)
    trainer = Trainer(cfg, encoder, model=model, disc=disc)
    g_opt = _restore_opt(arrays, "gen", model.parameters())
    d_opt = _restore_opt(arrays, "disc", disc.params)
    if g_opt is None or d_opt is None:
        warnings.warn(f"{path}: no optimizer section; optimizer state reinitialised", RuntimeWarning, stacklevel=2)
    else:
        trainer.g_opt, trainer.d_opt = g_opt, d_opt
    trainer.step = int(arrays["trainer.step"][0]) if "trainer.step" in arrays else 0
    return trainer


def load_generator(path):
    """(encoder, generator) from a checkpoint or inference weight file."""
    arrays = weightstore.load(path)
    return _encoder_from(arrays), model_mod.from_arrays(arrays)
