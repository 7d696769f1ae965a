"""Baseband signal-processing primitives.

These are plain functions over numpy arrays; ``blocks`` wraps them as
catalog units.  Conventions:

* samples are ``complex128`` arrays;
* bit streams are ``uint8`` arrays of 0/1, first bit first;
* the convolutional code is K=7 with generators 133/171 (octal) and the
  802.11 puncturing patterns for rates 2/3 and 3/4.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import InvalidRate, LengthNotMultiple, UnsupportedLength

FFT_LENGTHS = (16, 32, 64, 128, 256, 512, 1024, 2048)


# -- FFT -----------------------------------------------------------------------

def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


@lru_cache(maxsize=None)
def _bitrev(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(n: int, sign: int) -> tuple[np.ndarray, ...]:
    out = []
    size = 2
    while size <= n:
        half = size // 2
        out.append(np.exp(sign * 2j * np.pi * np.arange(half) / size))
        size *= 2
    return tuple(out)


def _radix2(x, sign: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if not _is_pow2(n):
        raise UnsupportedLength(f"FFT length {n} is not a power of two")
    a = x[..., _bitrev(n)]
    lead = a.shape[:-1]
    size = 2
    for tw in _twiddles(n, sign):
        half = size // 2
        blocks = a.reshape(*lead, n // size, size)
        top = blocks[..., :half].copy()
        bot = blocks[..., half:] * tw
        blocks[..., :half] = top + bot
        blocks[..., half:] = top - bot
        size *= 2
    return a


def fft(x) -> np.ndarray:
    """Forward DFT, X[k] = sum_n x[n] exp(-2j pi k n / N), along the last axis."""
    return _radix2(x, -1)


def ifft(x) -> np.ndarray:
    """Inverse of :func:`fft`, scaled by 1/N."""
    x = np.asarray(x)
    return _radix2(x, +1) / x.shape[-1]


def check_fft_length(n: int) -> None:
    if n not in FFT_LENGTHS:
        raise UnsupportedLength(f"FFT length {n} not in {FFT_LENGTHS}")


# -- FIR -----------------------------------------------------------------------

class FirFilter:
    """Streaming direct-form FIR; history starts at zero."""

    def __init__(self, taps) -> None:
        taps = np.asarray(taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size == 0:
            raise ValueError("taps must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(taps)):
            raise ValueError("taps must be finite")
        self.taps = taps
        self.history = np.zeros(taps.size - 1, dtype=np.complex128)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.complex128)
        if self.history.size == 0:
            return x * self.taps[0]
        ext = np.concatenate([self.history, x])
        y = np.convolve(ext, self.taps)[self.history.size:self.history.size + x.size]
        self.history = ext[-self.history.size:]
        return y


def fir_filter(x, taps) -> np.ndarray:
    return FirFilter(taps)(x)


# -- CRC -----------------------------------------------------------------------

@dataclass(frozen=True)
class CrcConfig:
    poly: int = 0x04C11DB7
    init: int = 0xFFFFFFFF
    xorout: int = 0xFFFFFFFF
    reflect: bool = True

    def __post_init__(self) -> None:
        for name in ("poly", "init", "xorout"):
            if not 0 <= getattr(self, name) <= 0xFFFFFFFF:
                raise ValueError(f"CRC {name} must be 32-bit")
        if self.poly == 0:
            raise ValueError("CRC polynomial must be nonzero")


CRC32 = CrcConfig()


def _reflect(v: int, width: int) -> int:
    r = 0
    for _ in range(width):
        r = (r << 1) | (v & 1)
        v >>= 1
    return r


_BYTE_REV = bytes(_reflect(b, 8) for b in range(256))


@lru_cache(maxsize=64)
def _crc_table(poly: int) -> tuple[int, ...]:
    table = []
    for byte in range(256):
        reg = byte << 24
        for _ in range(8):
            reg = ((reg << 1) ^ poly) if reg & 0x80000000 else (reg << 1)
            reg &= 0xFFFFFFFF
        table.append(reg)
    return tuple(table)


def crc_compute(data: bytes, config: CrcConfig = CRC32) -> int:
    table = _crc_table(config.poly)
    data = bytes(data)
    if config.reflect:
        data = data.translate(_BYTE_REV)
    reg = config.init
    for b in data:
        reg = ((reg << 8) & 0xFFFFFFFF) ^ table[(reg >> 24) ^ b]
    if config.reflect:
        reg = _reflect(reg, 32)
    return reg ^ config.xorout


def _crc_bytes(value: int, config: CrcConfig) -> bytes:
    # reflected CRCs are transmitted LSB first
    return value.to_bytes(4, "little" if config.reflect else "big")


def crc_append(data: bytes, config: CrcConfig = CRC32) -> bytes:
    return bytes(data) + _crc_bytes(crc_compute(data, config), config)


def crc_check(frame: bytes, config: CrcConfig = CRC32) -> bool:
    frame = bytes(frame)
    if len(frame) < 4:
        return False
    return _crc_bytes(crc_compute(frame[:-4], config), config) == frame[-4:]


# -- QAM -----------------------------------------------------------------------

QAM_ORDERS = (2, 4, 16, 64)
_QAM_SCALE = {2: 1.0, 4: 1 / np.sqrt(2), 16: 1 / np.sqrt(10), 64: 1 / np.sqrt(42)}


def bits_per_symbol(order: int) -> int:
    if order not in QAM_ORDERS:
        raise ValueError(f"QAM order {order} not in {QAM_ORDERS}")
    return order.bit_length() - 1


@lru_cache(maxsize=None)
def _pam_levels(m: int) -> np.ndarray:
    """Amplitude for each m-bit Gray label (label read MSB first)."""
    n = 1 << m
    levels = np.empty(n)
    for label in range(n):
        idx, g = 0, label
        while g:  # gray -> binary
            idx ^= g
            g >>= 1
        levels[label] = 2 * idx - (n - 1)
    return levels


def _labels(bits: np.ndarray, m: int) -> np.ndarray:
    weights = 1 << np.arange(m - 1, -1, -1)
    return bits.reshape(-1, m) @ weights


def qam_map(bits, order: int) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    k = bits_per_symbol(order)
    if bits.size % k:
        raise LengthNotMultiple(f"{bits.size} bits is not a multiple of {k}")
    groups = bits.reshape(-1, k).astype(np.int64)
    scale = _QAM_SCALE[order]
    if order == 2:
        return (2.0 * groups[:, 0] - 1.0).astype(np.complex128)
    m = k // 2
    i = _pam_levels(m)[_labels(groups[:, :m], m)]
    q = _pam_levels(m)[_labels(groups[:, m:], m)]
    return (i + 1j * q) * scale


def _slice_axis(values: np.ndarray, m: int) -> np.ndarray:
    n = 1 << m
    idx = np.clip(np.round((values + (n - 1)) / 2), 0, n - 1).astype(np.int64)
    gray = idx ^ (idx >> 1)
    shifts = np.arange(m - 1, -1, -1)
    return ((gray[:, None] >> shifts) & 1).astype(np.uint8)


def qam_demap(samples, order: int) -> np.ndarray:
    """Hard-decision inverse of :func:`qam_map`."""
    s = np.asarray(samples, dtype=np.complex128)
    k = bits_per_symbol(order)
    if order == 2:
        return (s.real > 0).astype(np.uint8)
    m = k // 2
    s = s / _QAM_SCALE[order]
    return np.hstack([_slice_axis(s.real, m), _slice_axis(s.imag, m)]).reshape(-1)


# -- convolutional code --------------------------------------------------------

CONSTRAINT_LENGTH = 7
GENERATORS = (0o133, 0o171)
TAIL_BITS = CONSTRAINT_LENGTH - 1
N_STATES = 1 << TAIL_BITS

# keep-masks over the A/B output pairs of one puncturing period
PUNCTURE = {
    Fraction(1, 2): np.array([1, 1], dtype=bool),
    Fraction(2, 3): np.array([1, 1, 1, 0], dtype=bool),
    Fraction(3, 4): np.array([1, 1, 1, 0, 0, 1], dtype=bool),
}
RATES = tuple(PUNCTURE)


def parse_rate(rate) -> Fraction:
    try:
        r = Fraction(rate) if not isinstance(rate, float) else Fraction(rate).limit_denominator(8)
    except (TypeError, ValueError, ZeroDivisionError):
        raise InvalidRate(f"unparseable code rate {rate!r}") from None
    if r not in PUNCTURE:
        raise InvalidRate(f"code rate {rate} not in {[str(x) for x in RATES]}")
    return r


def _parity(v: np.ndarray) -> np.ndarray:
    v = v.copy()
    out = np.zeros_like(v)
    while np.any(v):
        out ^= v & 1
        v >>= 1
    return out


@lru_cache(maxsize=None)
def _trellis() -> tuple[np.ndarray, np.ndarray]:
    """Output bit pairs indexed [state, input], and predecessor states [state, 2].

    The 7-bit register holds the current input in bit 6 and the previous six
    inputs below it (most recent in bit 5).
    """
    states = np.arange(N_STATES)
    outs = np.empty((N_STATES, 2, 2), dtype=np.uint8)
    for b in (0, 1):
        reg = (b << TAIL_BITS) | states
        for j, g in enumerate(GENERATORS):
            outs[:, b, j] = _parity(reg & g)
    ns = np.arange(N_STATES)
    preds = np.stack([((ns & 0x1F) << 1), ((ns & 0x1F) << 1) | 1], axis=1)
    return outs, preds


def padded_input_length(n_bits: int, rate, coded_multiple: int = 1) -> int:
    """Smallest message+tail+pad length whose coded length is whole and a
    multiple of ``coded_multiple``."""
    r = parse_rate(rate)
    period = r.numerator
    t = n_bits + TAIL_BITS
    while True:
        if t % period == 0:
            coded = t * r.denominator // r.numerator
            if coded % coded_multiple == 0:
                return t
        t += 1


def coded_length(n_bits: int, rate, coded_multiple: int = 1) -> int:
    r = parse_rate(rate)
    return padded_input_length(n_bits, r, coded_multiple) * r.denominator // r.numerator


def conv_encode(bits, rate=Fraction(1, 2), coded_multiple: int = 1) -> np.ndarray:
    """Encode, flush six tail zeros, zero-pad, then puncture."""
    r = parse_rate(rate)
    bits = np.asarray(bits, dtype=np.uint8)
    total = padded_input_length(bits.size, r, coded_multiple)
    msg = np.zeros(total, dtype=np.uint8)
    msg[:bits.size] = bits
    # register value at time t: bit6 = msg[t], bit(6-j) = msg[t-j]
    padded = np.concatenate([np.zeros(TAIL_BITS, dtype=np.uint8), msg]).astype(np.int64)
    reg = np.zeros(total, dtype=np.int64)
    for j in range(CONSTRAINT_LENGTH):
        reg |= padded[TAIL_BITS - j:TAIL_BITS - j + total] << (TAIL_BITS - j)
    pairs = np.stack([_parity(reg & g) for g in GENERATORS], axis=1).reshape(-1)
    keep = np.tile(PUNCTURE[r], pairs.size // PUNCTURE[r].size)
    return pairs[keep].astype(np.uint8)


def viterbi_decode(coded, rate=Fraction(1, 2), n_bits: int | None = None,
                   coded_multiple: int = 1) -> np.ndarray:
    """Hard-decision Viterbi decoder for a zero-terminated block.

    ``n_bits`` is the message length; when omitted it is taken as the whole
    decoded length minus the tail.  Traceback starts from the all-zero end
    state and spans the whole block.
    """
    r = parse_rate(rate)
    coded = np.asarray(coded, dtype=np.uint8)
    mask = PUNCTURE[r]
    kept = int(mask.sum())
    if coded.size % kept:
        raise LengthNotMultiple(f"{coded.size} coded bits is not whole punctured periods")
    periods = coded.size // kept
    full = np.zeros(periods * mask.size, dtype=np.int8)
    valid = np.tile(mask, periods)
    full[valid] = coded
    total = full.size // 2
    if n_bits is None:
        n_bits = total - TAIL_BITS
    elif padded_input_length(n_bits, r, coded_multiple) != total:
        raise LengthNotMultiple(f"{coded.size} coded bits do not match a {n_bits}-bit message")
    rx = full.reshape(total, 2)
    erased = ~valid.reshape(total, 2)

    outs, preds = _trellis()
    ns = np.arange(N_STATES)
    inp = ns >> (TAIL_BITS - 1)  # input bit that leads into each state
    # expected output pairs for both predecessor branches: [state, branch, 2]
    expect = outs[preds, inp[:, None]].astype(np.int8)

    big = np.iinfo(np.int32).max // 4
    metric = np.full(N_STATES, big, dtype=np.int32)
    metric[0] = 0
    decisions = np.empty((total, N_STATES), dtype=np.uint8)
    for t in range(total):
        diff = (expect != rx[t]) & ~erased[t]
        bm = diff.sum(axis=2, dtype=np.int32)
        cand = metric[preds] + bm
        choice = cand[:, 1] < cand[:, 0]
        decisions[t] = choice
        metric = np.where(choice, cand[:, 1], cand[:, 0])
    out = np.empty(total, dtype=np.uint8)
    state = 0
    for t in range(total - 1, -1, -1):
        out[t] = state >> (TAIL_BITS - 1)
        state = preds[state, decisions[t, state]]
    return out[:n_bits]


# -- bit/byte helpers ------------------------------------------------------------

def bytes_to_bits(data) -> np.ndarray:
    return np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))


def bits_to_bytes(bits) -> bytes:
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % 8:
        raise LengthNotMultiple(f"{bits.size} bits is not whole bytes")
    return np.packbits(bits).tobytes()
