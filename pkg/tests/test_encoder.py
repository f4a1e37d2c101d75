import struct

import numpy as np
import pytest

from stylekernel import encoder, weightstore
from stylekernel.encoder import EncoderWeights, encode
from stylekernel.tensor import Tensor


@pytest.fixture(scope="module")
def vgg():
    return encoder.random_init(7)


def test_channel_progression(vgg):
    assert vgg.widths == (64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512)
    assert vgg.params["conv4_1.weight"].shape == (512, 256, 3, 3)


def test_tap_shapes_and_sign(vgg, rng):
    img = Tensor(rng.random((64, 48, 3)).astype(np.float32))
    p = encode(img, vgg)
    assert p.relu2_1.shape == (32, 24, 128)
    assert p.relu3_1.shape == (16, 12, 256)
    assert p.main.shape == (8, 6, 512)
    assert p.relu5_1.shape == (4, 3, 512)
    for t in p.taps():
        assert np.all(t.data >= 0)
    main = p.main.data
    assert np.all(np.isfinite(main)) and main.var() > 0


def test_upto_stops_early(vgg, rng):
    p = encode(Tensor(rng.random((32, 32, 3)).astype(np.float32)), vgg, upto="relu4_1")
    assert p.relu5_1 is None and p.main.shape == (4, 4, 512)


def test_zero_input_gives_zero_taps(vgg):
    # the normalisation maps the declared mean to zero, so a mean-valued image
    # hits every conv as an all-zero input
    gray = Tensor(np.full((32, 32, 3), 0.5, dtype=np.float32))
    assert all(not t.data.any() for t in encode(gray, vgg).taps())
    w0 = EncoderWeights(vgg.params, mean=np.zeros(3, np.float32), std=np.ones(3, np.float32))
    zeros = Tensor(np.zeros((32, 32, 3), dtype=np.float32))
    assert all(not t.data.any() for t in encode(zeros, w0).taps())


def test_deterministic(vgg, rng):
    a = rng.random((32, 32, 3)).astype(np.float32)
    p1, p2 = encode(Tensor(a), vgg), encode(Tensor(a.copy()), vgg)
    for t1, t2 in zip(p1.taps(), p2.taps()):
        assert np.array_equal(t1.data, t2.data)


def test_indivisible_extent_error(vgg):
    with pytest.raises(ValueError, match="divisible by 16"):
        encode(Tensor(np.zeros((40, 32, 3), dtype=np.float32)), vgg)


def test_random_init_seeding():
    a, b, c = encoder.random_init(3), encoder.random_init(3), encoder.random_init(4)
    assert a.checksum() == b.checksum()
    assert a.checksum() != c.checksum()
    assert np.array_equal(a.params["conv1_1.weight"].data, b.params["conv1_1.weight"].data)


def test_save_load_roundtrip(vgg, tmp_path):
    path = tmp_path / "vgg.skw"
    encoder.save_weights(vgg, path)
    back = encoder.load_weights(path)
    assert back.checksum() == vgg.checksum()
    for k, v in vgg.params.items():
        assert np.array_equal(back.params[k].data, v.data)


def test_load_errors(vgg, tmp_path):
    path = tmp_path / "vgg.skw"
    encoder.save_weights(vgg, path)
    blob = path.read_bytes()

    bad = tmp_path / "bad.skw"
    bad.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(weightstore.BadMagicError):
        encoder.load_weights(bad)

    bad.write_bytes(blob[:4] + struct.pack("<I", 2) + blob[8:])
    with pytest.raises(weightstore.VersionMismatchError):
        encoder.load_weights(bad)

    bad.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(weightstore.TruncatedError):
        encoder.load_weights(bad)

    arrays = vgg.to_arrays()
    arrays["encoder.conv3_1.weight"] = np.zeros((200, 128, 3, 3), dtype=np.float32)
    weightstore.save(arrays, bad)
    with pytest.raises(weightstore.ShapeMismatchError, match="conv3_1"):
        encoder.load_weights(bad)

    arrays = vgg.to_arrays()
    arrays["encoder.conv3_4.weight"] = np.zeros((256, 256, 3, 3), dtype=np.float32)
    weightstore.save(arrays, bad)
    with pytest.raises(weightstore.ShapeMismatchError, match="conv3_4"):
        encoder.load_weights(bad)
