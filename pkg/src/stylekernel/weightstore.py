"""Binary named-tensor container shared by weights and checkpoints.

Layout (all integers little-endian)::

    b"SKW1" | version u32 | count u32
    repeated count times:
        name_len u16 | name utf-8 | rank u8 | extents u32 * rank | float32 payload
    crc32 u32 over every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SKW1"
VERSION = 1


class WeightFormatError(ValueError):
    pass


class BadMagicError(WeightFormatError):
    pass


class VersionMismatchError(WeightFormatError):
    pass


class TruncatedError(WeightFormatError):
    pass


class ChecksumError(WeightFormatError):
    pass


class ShapeMismatchError(WeightFormatError):
    pass


class MissingTensorError(WeightFormatError):
    pass


def dumps(tensors: Mapping[str, np.ndarray], version: int = VERSION) -> bytes:
    parts = [MAGIC, struct.pack("<II", version, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise WeightFormatError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise WeightFormatError(f"tensor {name!r} has rank {arr.ndim} > 255")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"not a weight file: expected magic {MAGIC!r}, found {bytes(blob[:4])!r}")
    if len(blob) < 16:
        raise TruncatedError("weight file truncated inside header")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise VersionMismatchError(f"weight file version {version}, this build reads version {VERSION}")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])

    out: dict[str, np.ndarray] = {}
    pos = 12

    def need(n):
        if pos + n > len(body):
            raise TruncatedError(f"weight file truncated at byte {pos} (need {n} more)")

    for _ in range(count):
        need(2)
        (nlen,) = struct.unpack_from("<H", body, pos)
        pos += 2
        need(nlen + 1)
        name = bytes(body[pos:pos + nlen]).decode("utf-8")
        pos += nlen
        rank = body[pos]
        pos += 1
        need(4 * rank)
        shape = struct.unpack_from(f"<{rank}I", body, pos)
        pos += 4 * rank
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        need(nbytes)
        if name in out:
            raise WeightFormatError(f"duplicate tensor name {name!r}")
        out[name] = np.frombuffer(body, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape).astype(np.float32)
        pos += nbytes
    if pos != len(body):
        raise TruncatedError(f"weight file has {len(body) - pos} unexpected trailing bytes")
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumError("weight file CRC mismatch")
    return out


def save(tensors: Mapping[str, np.ndarray], path) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())


def expect_shapes(tensors: Mapping[str, np.ndarray], expected: Mapping[str, tuple], what: str) -> None:
    """Check that every expected tensor exists with the expected shape."""
    for name, shape in expected.items():
        if name not in tensors:
            raise MissingTensorError(f"{what}: missing tensor {name!r}")
        if tuple(tensors[name].shape) != tuple(shape):
            raise ShapeMismatchError(
                f"{what}: layer {name!r} has shape {tuple(tensors[name].shape)}, expected {tuple(shape)}")
