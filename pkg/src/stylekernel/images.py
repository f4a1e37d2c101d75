"""8-bit RGB image I/O (PNG via Pillow, binary PPM without it) and toy data."""

from __future__ import annotations

from pathlib import Path

import numpy as np

IMAGE_SUFFIXES = (".png", ".ppm")


def _read_ppm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    pos += 1
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: only binary P6 PPM is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM is supported (maxval {maxval})")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return pixels.reshape(h, w, 3).copy()


def _write_ppm(path: Path, pixels: np.ndarray) -> None:
    h, w, _ = pixels.shape
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode() + pixels.tobytes())


def read_image(path) -> np.ndarray:
    """Decode to an H x W x 3 uint8 array."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"cannot read image {path}: no such file")
    if path.suffix.lower() == ".ppm":
        return _read_ppm(path)
    from PIL import Image

    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except OSError as e:
        raise ValueError(f"cannot decode image {path}: {e}") from None


def write_image(path, pixels: np.ndarray) -> None:
    path = Path(path)
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 pixels, got {pixels.shape}")
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".ppm":
        _write_ppm(path, pixels)
        return
    from PIL import Image

    Image.fromarray(pixels, "RGB").save(path, format="PNG")


def to_unit(pixels: np.ndarray, dtype=np.float32) -> np.ndarray:
    return (pixels.astype(np.float64) / 255.0).astype(dtype)


def pad_to_multiple(pixels: np.ndarray, m: int = 16) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad bottom/right so both extents are multiples of ``m``."""
    h, w = pixels.shape[:2]
    ph, pw = (-h) % m, (-w) % m
    if ph or pw:
        pixels = np.pad(pixels, ((0, ph), (0, pw), (0, 0)), mode="reflect" if min(h, w) > max(ph, pw) else "edge")
    return pixels, (h, w)


def load_dir(path) -> list[np.ndarray]:
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"dataset directory {path} does not exist")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    return [to_unit(read_image(p)) for p in files]


def random_crop(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    if h < size or w < size:
        reps = (-(-size // h), -(-size // w), 1)
        img = np.tile(img, reps)
        h, w = img.shape[:2]
    y = int(rng.integers(0, h - size + 1))
    x = int(rng.integers(0, w - size + 1))
    return np.ascontiguousarray(img[y:y + size, x:x + size])


def toy_content(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Smooth gradient background with a couple of flat-coloured shapes."""
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    c0, c1 = rng.random(3), rng.random(3)
    t = (yy * rng.random() + xx * rng.random())[..., None]
    t = t / max(t.max(), 1e-6)
    img = c0 * (1 - t) + c1 * t
    for _ in range(2):
        cy, cx = rng.random(2)
        r = 0.1 + 0.2 * rng.random()
        disk = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        img[disk] = rng.random(3)
    return img.astype(np.float32)


def toy_style(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Oriented colour stripes with noise: crude texture exemplars."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    theta = rng.random() * np.pi
    freq = 3 + 8 * rng.random()
    phase = np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy))[..., None]
    a, b = rng.random(3), rng.random(3)
    img = a * (phase > 0) + b * (phase <= 0) + 0.1 * rng.standard_normal((size, size, 3))
    return np.clip(img, 0, 1).astype(np.float32)
