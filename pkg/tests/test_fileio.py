import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from discseg.fileio import (
    FormatError,
    atomic_write,
    decode_pgm,
    decode_ppm,
    decode_tensor,
    encode_pgm,
    encode_ppm,
    encode_tensor,
    format_key_values,
    parse_key_values,
    read_pgm,
    read_tensor,
    write_labels,
    write_tensor,
)


@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.uint16, np.uint8])
@pytest.mark.parametrize("shape", [(), (0,), (3,), (2, 3), (2, 1, 4)])
def test_tensor_roundtrip(tmp_path, dtype, shape):
    rng = np.random.default_rng(0)
    arr = (rng.random(shape) * 200).astype(dtype)
    write_tensor(tmp_path / "t.dseg", arr)
    back = read_tensor(tmp_path / "t.dseg")
    assert back.dtype == np.dtype(dtype)
    assert back.shape == arr.shape
    assert np.array_equal(back, arr)


def test_tensor_header_layout():
    data = encode_tensor(np.arange(6, dtype=np.uint16).reshape(2, 3))
    assert data[:4] == b"DSEG"
    assert struct.unpack_from("<HBB", data, 4) == (1, 2, 2)
    assert struct.unpack_from("<2I", data, 8) == (2, 3)
    assert data[16:18] == b"\x00\x00" and data[18:20] == b"\x01\x00"
    assert len(data) == 16 + 6 * 2


def test_tensor_big_endian_input_is_stored_little_endian():
    arr = np.array([1.5, -2.0], dtype=">f8")
    assert np.array_equal(decode_tensor(encode_tensor(arr)), arr)
    assert encode_tensor(arr)[12:] == np.array([1.5, -2.0], dtype="<f8").tobytes()


def test_tensor_rejects_bad_input():
    with pytest.raises(FormatError):
        encode_tensor(np.zeros(2, dtype=np.int32))
    good = encode_tensor(np.zeros(4, dtype=np.float32))
    with pytest.raises(FormatError):
        decode_tensor(b"XXXX" + good[4:])
    with pytest.raises(FormatError):
        decode_tensor(good[:-1])
    with pytest.raises(FormatError):
        decode_tensor(good[:6] + bytes([9]) + good[7:])


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 9), w=st.integers(1, 9), seed=st.integers(0, 1000))
def test_pnm_roundtrip(h, w, seed):
    rng = np.random.default_rng(seed)
    rgb = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    assert np.array_equal(decode_ppm(encode_ppm(rgb)), rgb)
    labels = rng.integers(0, 65536, size=(h, w))
    assert np.array_equal(decode_pgm(encode_pgm(labels)), labels)
    small = rng.integers(0, 256, size=(h, w))
    assert np.array_equal(decode_pgm(encode_pgm(small)), small)


def test_pgm_16bit_is_big_endian():
    data = encode_pgm(np.array([[258]]), maxval=65535)
    assert data.endswith(b"\x01\x02")
    assert data.startswith(b"P5\n1 1\n65535\n")


def test_ppm_from_float():
    img = np.array([[[0.0, 0.5, 1.0]]])
    assert np.array_equal(decode_ppm(encode_ppm(img)), [[[0, 128, 255]]])


def test_pnm_header_comments():
    data = b"P5\n# made by hand\n2 1\n255\n\x07\x08"
    assert np.array_equal(decode_pgm(data), [[7, 8]])


def test_pnm_errors():
    with pytest.raises(FormatError):
        decode_ppm(encode_pgm(np.zeros((2, 2), dtype=int)))
    with pytest.raises(FormatError):
        decode_pgm(encode_pgm(np.zeros((2, 2), dtype=int))[:-1])
    with pytest.raises(FormatError):
        encode_pgm(np.array([[70000]]))


def test_labels_always_16bit(tmp_path):
    write_labels(tmp_path / "l.pgm", np.array([[0, 3], [2, 1]]))
    assert (tmp_path / "l.pgm").read_bytes().startswith(b"P5\n2 2\n65535\n")
    assert np.array_equal(read_pgm(tmp_path / "l.pgm"), [[0, 3], [2, 1]])


def test_atomic_write_leaves_no_temp_files(tmp_path):
    atomic_write(tmp_path / "sub" / "a.bin", b"abc")
    atomic_write(tmp_path / "sub" / "a.bin", b"xyz")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["a.bin"]
    assert (tmp_path / "sub" / "a.bin").read_bytes() == b"xyz"


def test_key_values():
    text = "# header\na = 1\n\nb=two words  # trailing\n"
    assert parse_key_values(text) == {"a": "1", "b": "two words"}
    assert parse_key_values(format_key_values({"x": 1.5, "y": "l2"})) == {"x": "1.5", "y": "l2"}
    with pytest.raises(FormatError):
        parse_key_values("novalue\n")
    with pytest.raises(FormatError):
        parse_key_values("a = 1\na = 2\n")
