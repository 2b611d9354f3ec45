import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tnmf.errors import PGMError
from tnmf.recognition import GrayImage, parse_pgm, serialize_pgm


def test_plain_example():
    img = parse_pgm(b"P2\n2 2\n255\n0 255 128 64")
    assert (img.width, img.height) == (2, 2)
    np.testing.assert_array_equal(img.intensities, [0, 1, 128 / 255, 64 / 255])


def test_raw_example():
    img = parse_pgm(b"P5\n2 2\n255\n" + bytes([0, 255, 255, 0]))
    np.testing.assert_array_equal(img.intensities, [0, 1, 1, 0])


def test_comments_and_whitespace():
    data = b"P5 # magic\n# a full comment line\n3\t1 #w h\n 255\n" + bytes([0, 51, 255])
    img = parse_pgm(data)
    assert (img.width, img.height) == (3, 1)
    np.testing.assert_allclose(img.intensities, [0, 0.2, 1])


def test_raster_starting_with_whitespace_byte():
    # 0x0A after the single separator is raster data, not header whitespace.
    img = parse_pgm(b"P5 2 1 255\n" + bytes([10, 32]))
    np.testing.assert_allclose(img.intensities, [10 / 255, 32 / 255])


def test_sixteen_bit_big_endian():
    img = parse_pgm(b"P5 2 1 65535\n" + bytes([0x01, 0x00, 0xFF, 0xFF]))
    np.testing.assert_allclose(img.intensities, [256 / 65535, 1.0])


def test_row_major_layout():
    img = parse_pgm(b"P2 3 2 9\n1 2 3\n4 5 6\n")
    assert img.pixels.shape == (2, 3)
    np.testing.assert_allclose(img.pixels[1], [4 / 9, 5 / 9, 6 / 9])


@pytest.mark.parametrize("data,offset", [
    (b"P6\n1 1\n255\n\x00", 0),
    (b"P5\n2 2\n0\n", 7),
    (b"P5\n2 2\n255\n\x00\x01", 13),
    (b"P5\n2 x\n255\n", 5),
    (b"P2\n2 1\n255\n1", 12),
])
def test_errors_carry_offsets(data, offset):
    with pytest.raises(PGMError) as info:
        parse_pgm(data)
    assert info.value.offset == offset


def test_sample_above_maxval():
    with pytest.raises(PGMError, match="exceeds maxval"):
        parse_pgm(b"P2 2 1 10\n3 11\n")


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 12), st.integers(1, 12),
    st.sampled_from([1, 15, 255, 256, 1023, 65535]),
    st.booleans(), st.integers(0, 2**32 - 1),
)
def test_round_trip(w, h, maxval, plain, seed):
    img = GrayImage(np.random.default_rng(seed).random((h, w)))
    back = parse_pgm(serialize_pgm(img, maxval, plain=plain))
    assert back.pixels.shape == img.pixels.shape
    assert np.max(np.abs(back.pixels - img.pixels)) <= 1 / (2 * maxval) + 1e-15
