import struct

import numpy as np
import pytest

from gsmnet.checkpoint import CheckpointFormatError, decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint


def sample():
    rng = np.random.default_rng(0)
    return {"b": rng.standard_normal((2, 3)).astype(np.float32), "a": np.arange(4, dtype=np.float32),
            "s": np.array(1.5, dtype=np.float32)}


def test_round_trip_bit_exact(tmp_path):
    t = sample()
    write_checkpoint(tmp_path / "c.ckpt", t)
    back = read_checkpoint(tmp_path / "c.ckpt")
    assert sorted(back) == sorted(t)
    for k in t:
        assert back[k].dtype == np.float32
        assert back[k].tobytes() == t[k].tobytes() and back[k].shape == t[k].shape


def test_encoding_independent_of_insertion_order():
    t = sample()
    assert encode_checkpoint(t) == encode_checkpoint(dict(reversed(list(t.items()))))


def test_layout_header():
    buf = encode_checkpoint({"w": np.zeros((2, 1), dtype=np.float32)})
    assert buf[:8] == b"GSMCKPT1"
    assert struct.unpack_from("<II", buf, 8) == (1, 1)
    assert buf[16:17] == b"w"
    assert struct.unpack_from("<III", buf, 17) == (2, 2, 1)
    assert len(buf) == 17 + 12 + 2 * 4


def test_bad_magic():
    buf = bytearray(encode_checkpoint(sample()))
    buf[0] ^= 0xFF
    with pytest.raises(CheckpointFormatError, match="offset 0"):
        decode_checkpoint(bytes(buf))


def test_truncation_reports_offset():
    buf = encode_checkpoint(sample())
    with pytest.raises(CheckpointFormatError) as err:
        decode_checkpoint(buf[:-3])
    assert err.value.offset > 8


def test_extent_overflow_rejected():
    buf = bytearray(encode_checkpoint({"x": np.zeros(2, dtype=np.float32)}))
    struct.pack_into("<I", buf, 8 + 4 + 4 + 1 + 4, 2**31)
    with pytest.raises(CheckpointFormatError, match="past end"):
        decode_checkpoint(bytes(buf))


def test_trailing_bytes_rejected():
    with pytest.raises(CheckpointFormatError, match="trailing"):
        decode_checkpoint(encode_checkpoint(sample()) + b"\0")
