"""Arbitrary style transfer with per-pixel separable style kernels, on a small numpy autograd."""

from .config import TrainConfig, load_config, parse_config
from .encoder import EncoderWeights, encode
from .model import StyleKernelNet, blend, generate, init_model
from .skg import GroupPermutation, dynamic_separable_conv, flops_dynamic, flops_vanilla
from .tensor import Tensor, no_grad
from .trainer import Trainer, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "EncoderWeights", "GroupPermutation", "StyleKernelNet", "Tensor", "TrainConfig", "Trainer",
    "blend", "dynamic_separable_conv", "encode", "flops_dynamic", "flops_vanilla", "generate",
    "init_model", "load_checkpoint", "load_config", "no_grad", "parse_config", "save_checkpoint",
]
