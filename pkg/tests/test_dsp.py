from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import bitwise_crc32, direct_fir, naive_dft, trellis_encode
from sdrplane import dsp
from sdrplane.errors import InvalidRate, LengthNotMultiple, UnsupportedLength

RNG = np.random.default_rng(20240611)


@pytest.mark.parametrize("n", [16, 32, 64, 128, 256, 512, 1024])
def test_fft_matches_naive_dft(n):
    for _ in range(100):
        x = RNG.standard_normal(n) + 1j * RNG.standard_normal(n)
        ref = naive_dft(x)
        assert np.max(np.abs(dsp.fft(x) - ref)) <= 1e-9 * np.max(np.abs(ref))
        assert np.allclose(dsp.ifft(dsp.fft(x)), x, atol=1e-12)


def test_ifft_matches_naive_inverse():
    x = RNG.standard_normal(64) + 1j * RNG.standard_normal(64)
    assert np.allclose(dsp.ifft(x), naive_dft(x, +1) / 64, atol=1e-12)


def test_fft_length_checks():
    with pytest.raises(UnsupportedLength):
        dsp.fft(np.zeros(48))
    with pytest.raises(UnsupportedLength):
        dsp.check_fft_length(4096)


def test_crc32_check_value():
    assert bitwise_crc32(b"123456789") == 0xCBF43926
    assert dsp.crc_compute(b"123456789") == 0xCBF43926


@given(st.binary(max_size=200))
def test_crc32_matches_bitwise(data):
    assert dsp.crc_compute(data) == bitwise_crc32(data)
    framed = dsp.crc_append(data)
    assert dsp.crc_check(framed)


@given(st.binary(min_size=1, max_size=64), st.data())
def test_crc_detects_single_bit_flip(data, draw):
    framed = bytearray(dsp.crc_append(data))
    bit = draw.draw(st.integers(0, len(framed) * 8 - 1))
    framed[bit // 8] ^= 1 << (bit % 8)
    assert not dsp.crc_check(bytes(framed))


def test_crc_non_reflected_config():
    # CRC-32/MPEG-2 check value
    cfg = dsp.CrcConfig(poly=0x04C11DB7, init=0xFFFFFFFF, xorout=0, reflect=False)
    assert dsp.crc_compute(b"123456789", cfg) == 0x0376E6E7
    assert dsp.crc_check(dsp.crc_append(b"abc", cfg), cfg)


def test_fir_matches_direct_convolution():
    taps = RNG.standard_normal(9)
    x = RNG.standard_normal(300) + 1j * RNG.standard_normal(300)
    assert np.allclose(dsp.fir_filter(x, taps), direct_fir(x, taps))


def test_fir_streaming_equals_one_shot():
    taps = RNG.standard_normal(7)
    x = RNG.standard_normal(500) + 1j * RNG.standard_normal(500)
    f = dsp.FirFilter(taps)
    pieces = np.concatenate([f(x[:13]), f(x[13:200]), f(x[200:201]), f(x[201:])])
    assert np.allclose(pieces, direct_fir(x, taps))


@pytest.mark.parametrize("rate", ["1/2", "2/3", "3/4"])
def test_conv_encode_matches_trellis_all_bytes(rate):
    r = Fraction(rate)
    keep = dsp.PUNCTURE[r]
    for m in range(256):
        bits = np.array([(m >> (7 - i)) & 1 for i in range(8)], dtype=np.uint8)
        total = dsp.padded_input_length(8, r)
        padded = np.zeros(total - dsp.TAIL_BITS, dtype=np.uint8)
        padded[:8] = bits
        assert np.array_equal(dsp.conv_encode(bits, r), trellis_encode(padded, keep)), m


@pytest.mark.parametrize("rate", ["1/2", "2/3", "3/4"])
def test_viterbi_inverts_encoder_all_bytes(rate):
    for m in range(256):
        bits = np.array([(m >> (7 - i)) & 1 for i in range(8)], dtype=np.uint8)
        assert np.array_equal(dsp.viterbi_decode(dsp.conv_encode(bits, rate), rate, 8), bits)


def test_viterbi_corrects_sparse_errors():
    bits = RNG.integers(0, 2, 400).astype(np.uint8)
    coded = dsp.conv_encode(bits, "1/2")
    for pos in (10, 200, 500):
        coded[pos] ^= 1
    assert np.array_equal(dsp.viterbi_decode(coded, "1/2", 400), bits)


def test_coded_multiple_padding():
    n = dsp.coded_length(104 * 8, "1/2", coded_multiple=128)
    assert n % 128 == 0 and n >= 2 * (104 * 8 + 6)
    bits = RNG.integers(0, 2, 832).astype(np.uint8)
    coded = dsp.conv_encode(bits, "1/2", 128)
    assert coded.size == n
    assert np.array_equal(dsp.viterbi_decode(coded, "1/2", 832, 128), bits)


def test_code_rate_validation():
    with pytest.raises(InvalidRate):
        dsp.parse_rate("5/6")
    with pytest.raises(LengthNotMultiple):
        dsp.viterbi_decode(np.zeros(5, dtype=np.uint8), "3/4")


@pytest.mark.parametrize("order", dsp.QAM_ORDERS)
def test_qam_round_trip_exhaustive(order):
    k = dsp.bits_per_symbol(order)
    labels = np.arange(1 << k)
    bits = ((labels[:, None] >> np.arange(k - 1, -1, -1)) & 1).astype(np.uint8).reshape(-1)
    syms = dsp.qam_map(bits, order)
    assert np.unique(np.round(syms, 12)).size == order
    assert np.isclose(np.mean(np.abs(syms) ** 2), 1.0)
    assert np.array_equal(dsp.qam_demap(syms, order), bits)


@pytest.mark.parametrize("order", [16, 64])
def test_qam_gray_neighbours_differ_by_one_bit(order):
    k = dsp.bits_per_symbol(order)
    labels = np.arange(1 << k)
    bits = ((labels[:, None] >> np.arange(k - 1, -1, -1)) & 1).astype(np.uint8)
    syms = dsp.qam_map(bits.reshape(-1), order)
    d = np.abs(syms[:, None] - syms[None, :])
    dmin = np.min(d[d > 1e-9])
    for a, b in zip(*np.nonzero(np.isclose(d, dmin))):
        assert np.sum(bits[a] != bits[b]) == 1


def test_qam_length_check():
    with pytest.raises(LengthNotMultiple):
        dsp.qam_map(np.zeros(5, dtype=np.uint8), 16)
