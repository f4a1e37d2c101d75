"""Run configuration: dataclass defaults plus a flat ``key=value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import get_type_hints

from .losses import LossWeights


@dataclass
class TrainConfig:
    # full-scale runs use 160k iterations, batch 16, 256 crops
    lr: float = 1e-4
    batch_size: int = 2
    iterations: int = 200
    crop: int = 64
    seed: int = 0
    k: int = 3
    alpha: float = 10.0
    heads: int = 8
    shared_cgm: bool = False
    d_every: int = 2
    checkpoint_every: int = 100
    style_loss: str = "meanstd"
    shuffle_seed: int = -1  # inference only; -1 keeps the identity group order
    lambda_adv: float = 1.0
    lambda_rec: float = 1.0
    lambda_cont: float = 1.0
    lambda_sty: float = 1.0
    lambda_remd: float = 3.0
    lambda_rec1: float = 20.0
    lambda_rec2: float = 0.5
    content_dir: str = ""
    style_dir: str = ""
    out_dir: str = "runs"
    encoder_weights: str = ""
    resume: str = ""

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.crop % 16:
            raise ValueError(f"crop must be divisible by 16, got {self.crop}")
        if self.batch_size < 1 or self.iterations < 0 or self.d_every < 1:
            raise ValueError("batch_size and d_every must be >= 1 and iterations >= 0")
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"k must be odd and >= 1, got {self.k}")
        if self.style_loss not in ("meanstd", "gram"):
            raise ValueError(f"style_loss must be 'meanstd' or 'gram', got {self.style_loss!r}")
        self.loss_weights()

    def loss_weights(self) -> LossWeights:
        return LossWeights(adv=self.lambda_adv, rec=self.lambda_rec, cont=self.lambda_cont,
                           sty=self.lambda_sty, remd=self.lambda_remd, rec1=self.lambda_rec1,
                           rec2=self.lambda_rec2)


class ConfigError(ValueError):
    pass


def _parse_value(raw: str, typ, key: str):
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {typ.__name__}") from None


def parse_config(text: str, **overrides) -> TrainConfig:
    hints = get_type_hints(TrainConfig)
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in hints:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(raw, hints[key], key)
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig(**values)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def load_config(path, **overrides) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), **overrides)


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{f.name}={getattr(cfg, f.name)}\n" for f in dataclasses.fields(cfg))
