"""Fixed VGG-16 feature extractor truncated after relu5_1."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from . import weightstore
from .layers import conv, conv_params
from .tensor import Tensor

# (layer name, output channels); "pool" marks a 2x2 max-pool.
VGG16_LAYOUT = (
    ("conv1_1", 64), ("conv1_2", 64), "pool",
    ("conv2_1", 128), ("conv2_2", 128), "pool",
    ("conv3_1", 256), ("conv3_2", 256), ("conv3_3", 256), "pool",
    ("conv4_1", 512), ("conv4_2", 512), ("conv4_3", 512), "pool",
    ("conv5_1", 512),
)
VGG16_WIDTHS = tuple(item[1] for item in VGG16_LAYOUT if item != "pool")
TAPS = ("relu2_1", "relu3_1", "relu4_1", "relu5_1")
MAIN_TAP = "relu4_1"


@dataclass
class EncoderWeights:
    params: dict[str, Tensor]
    mean: np.ndarray = field(default_factory=lambda: np.full(3, 0.5, dtype=np.float32))
    std: np.ndarray = field(default_factory=lambda: np.full(3, 0.5, dtype=np.float32))
    widths: tuple = VGG16_WIDTHS

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def layers(self):
        """Conv layer names and ``"pool"`` markers, in forward order."""
        return [item if item == "pool" else item[0] for item in VGG16_LAYOUT]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(self.params[name].data.tobytes())
        h.update(self.mean.tobytes())
        h.update(self.std.tobytes())
        return h.hexdigest()

    def to_arrays(self, prefix: str = "encoder.") -> dict[str, np.ndarray]:
        out = {prefix + k: v.data for k, v in self.params.items()}
        out[prefix + "input_mean"] = self.mean
        out[prefix + "input_std"] = self.std
        return out

    def astype(self, dtype) -> "EncoderWeights":
        return EncoderWeights({k: Tensor(v.data.astype(dtype)) for k, v in self.params.items()},
                              self.mean, self.std, self.widths)


@dataclass
class FeaturePyramid:
    relu2_1: Tensor | None = None
    relu3_1: Tensor | None = None
    relu4_1: Tensor | None = None
    relu5_1: Tensor | None = None

    @property
    def main(self) -> Tensor:
        return self.relu4_1

    def taps(self) -> list[Tensor]:
        return [getattr(self, name) for name in TAPS]


def _expected_shapes(widths=VGG16_WIDTHS) -> dict[str, tuple]:
    shapes, cin, it = {}, 3, iter(widths)
    for item in VGG16_LAYOUT:
        if item == "pool":
            continue
        cout = next(it)
        shapes[f"{item[0]}.weight"] = (cout, cin, 3, 3)
        shapes[f"{item[0]}.bias"] = (cout,)
        cin = cout
    return shapes


def random_init(seed: int, widths=VGG16_WIDTHS, dtype=np.float32) -> EncoderWeights:
    """Seeded stand-in for pretrained weights (He-scaled Gaussian, zero bias).

    ``widths`` exists so tests can build narrow encoders; files on disk are
    always checked against the VGG-16 widths.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    cin, it = 3, iter(widths)
    for item in VGG16_LAYOUT:
        if item == "pool":
            continue
        cout = next(it)
        params.update(conv_params(rng, item[0], cout, cin, 3, dtype=dtype))
        cin = cout
    return EncoderWeights(params, widths=tuple(widths))


def encode(image: Tensor, w: EncoderWeights, upto: str = "relu5_1") -> FeaturePyramid:
    """Run an H x W x 3 image with pixels in [0, 1] through the encoder.

    Layers past ``upto`` are skipped, and so are their taps.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"encode expects an H x W x 3 image, got shape {image.shape}")
    H, W, _ = image.shape
    if H % 16 or W % 16:
        raise ValueError(f"image extents {H}x{W} must be divisible by 16; pad or resize the input first")
    mean = np.broadcast_to(w.mean.astype(image.dtype), image.shape)
    std = np.broadcast_to(w.std.astype(image.dtype), image.shape)
    x = T.div(T.sub(image, Tensor(mean)), Tensor(std))
    pyramid = FeaturePyramid()
    for name in w.layers():
        if name == "pool":
            x = T.max_pool2x2(x)
            continue
        x = T.relu(conv(x, w.params, name, pad=1))
        tap = "relu" + name[4:]
        if tap in TAPS:
            setattr(pyramid, tap, x)
            if tap == upto:
                break
    return pyramid


def save_weights(w: EncoderWeights, path) -> None:
    weightstore.save(w.to_arrays(), path)


def from_arrays(arrays, prefix: str = "encoder.", widths=VGG16_WIDTHS) -> EncoderWeights:
    """Build encoder weights from a WeightStore mapping, enforcing VGG-16 shapes.

    ``widths`` only differs from VGG-16 for narrow encoders saved inside checkpoints.
    """
    widths = tuple(int(c) for c in widths)
    sub = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
    expected = _expected_shapes(widths)
    expected["input_mean"] = (3,)
    expected["input_std"] = (3,)
    weightstore.expect_shapes(sub, expected, "encoder")
    extra = sorted(set(sub) - set(expected))
    if extra:
        # e.g. conv3_4 from a VGG-19 file
        raise weightstore.ShapeMismatchError(f"encoder: unexpected layer(s) {extra}; only VGG-16 is supported")
    params = {k: Tensor(np.array(sub[k], dtype=np.float32)) for k in expected if not k.startswith("input_")}
    return EncoderWeights(params, np.array(sub["input_mean"], dtype=np.float32),
                          np.array(sub["input_std"], dtype=np.float32), widths)


def load_weights(path) -> EncoderWeights:
    return from_arrays(weightstore.load(path))
