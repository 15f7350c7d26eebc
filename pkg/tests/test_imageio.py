import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ovmorph.errors import InvalidInputError, ParseError
from ovmorph.imageio import decode_pgm, decode_ppm, encode_pgm, encode_ppm, read_pgm, read_ppm, write_pgm, write_ppm


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9), st.just(3))))
def test_ppm_round_trip_is_bit_exact(img):
    data = encode_ppm(img)
    back = decode_ppm(data)
    assert np.array_equal(back, img)
    assert encode_ppm(back) == data


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint16, st.tuples(st.integers(1, 9), st.integers(1, 9))))
def test_pgm16_round_trip(mask):
    data = encode_pgm(mask)
    assert data.startswith(b"P5\n")
    assert np.array_equal(decode_pgm(data), mask)


def test_pgm16_is_big_endian():
    data = encode_pgm(np.array([[258]], dtype=np.uint16))
    assert data.endswith(b"\x01\x02")


def test_header_comments_and_whitespace():
    raw = b"P6 # comment\n2\t1\n# another\n255\n" + bytes(range(6))
    img = decode_ppm(raw)
    assert img.shape == (1, 2, 3)
    assert img[0, 1].tolist() == [3, 4, 5]


def test_eight_bit_pgm():
    mask = decode_pgm(b"P5\n2 2\n255\n\x00\x01\x02\x03")
    assert mask.tolist() == [[0, 1], [2, 3]]


@pytest.mark.parametrize(
    "raw",
    [
        b"P3\n1 1\n255\n\x00\x00\x00",
        b"P6\n1 1\n65535\n" + b"\x00" * 6,
        b"P6\n2 2\n255\n\x00\x00",
        b"P6\n0 1\n255\n",
        b"P6\n1",
        b"P6\nx 1\n255\n\x00\x00\x00",
    ],
)
def test_malformed_ppm(raw):
    with pytest.raises(ParseError):
        decode_ppm(raw)


def test_encode_rejects_bad_arrays():
    with pytest.raises(InvalidInputError):
        encode_ppm(np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(InvalidInputError):
        encode_pgm(np.array([[70000]]))


def test_file_round_trip(tmp_path):
    img = np.arange(24, dtype=np.uint8).reshape(2, 4, 3)
    write_ppm(tmp_path / "sub" / "a.ppm", img)
    assert np.array_equal(read_ppm(tmp_path / "sub" / "a.ppm"), img)
    mask = np.array([[0, 1], [65535, 7]], dtype=np.uint16)
    write_pgm(tmp_path / "m.pgm", mask)
    assert np.array_equal(read_pgm(tmp_path / "m.pgm"), mask)
