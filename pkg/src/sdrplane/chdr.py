"""CHDR packet codec and the minimal VITA-49 (VRT) envelope used between nodes.

CHDR header, one 64-bit big-endian word::

    63..62  packet type (00 data, 01 flow control, 10 command, 11 response)
    61      has_time
    60      end_of_burst
    59..48  sequence number (mod 4096)
    47..32  total packet length in bytes, header included
    31..0   stream id (src_device, src_endpoint, dst_device, dst_endpoint)

An optional 64-bit timestamp word follows when ``has_time`` is set, then the
payload bytes.

VRT frame (IF data with stream id and trailer, no class id, no timestamps)::

    word 0   type=0001 | C=0 | T=1 | 00 | TSI=00 | TSF=00 | count(4) | size(16)
    word 1   stream id
    ...      payload words (CHDR bytes zero-padded to a word boundary)
    last     trailer, bits 1..0 hold the number of pad bytes
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import (
    BadLength,
    CorruptFrame,
    InconsistentLength,
    OversizeFrame,
    OversizeMtu,
    Truncated,
)

HEADER_BYTES = 8
TIMESTAMP_BYTES = 8
DEFAULT_MTU = 8000
SEQ_MODULUS = 4096

_WORD64 = struct.Struct(">Q")
_WORD32 = struct.Struct(">I")


class PacketType(enum.IntEnum):
    DATA = 0
    FLOW_CONTROL = 1
    COMMAND = 2
    RESPONSE = 3


@dataclass(frozen=True, slots=True)
class StreamId:
    src_device: int = 0
    src_endpoint: int = 0
    dst_device: int = 0
    dst_endpoint: int = 0

    def __post_init__(self) -> None:
        for name in ("src_device", "src_endpoint", "dst_device", "dst_endpoint"):
            v = getattr(self, name)
            if not 0 <= v <= 0xFF:
                raise ValueError(f"{name}={v} outside 0..255")

    @property
    def src(self) -> tuple[int, int]:
        return (self.src_device, self.src_endpoint)

    @property
    def dst(self) -> tuple[int, int]:
        return (self.dst_device, self.dst_endpoint)

    def swapped(self) -> "StreamId":
        return StreamId(self.dst_device, self.dst_endpoint, self.src_device, self.src_endpoint)

    @classmethod
    def between(cls, src: tuple[int, int], dst: tuple[int, int]) -> "StreamId":
        return cls(src[0], src[1], dst[0], dst[1])

    def __str__(self) -> str:
        return f"{self.src_device}.{self.src_endpoint}>{self.dst_device}.{self.dst_endpoint}"


def pack_sid(s: StreamId) -> int:
    return (s.src_device << 24) | (s.src_endpoint << 16) | (s.dst_device << 8) | s.dst_endpoint


def unpack_sid(v: int) -> StreamId:
    if not 0 <= v <= 0xFFFFFFFF:
        raise ValueError(f"sid {v:#x} is not a 32-bit value")
    return StreamId((v >> 24) & 0xFF, (v >> 16) & 0xFF, (v >> 8) & 0xFF, v & 0xFF)


def header_overhead(has_time: bool) -> int:
    return HEADER_BYTES + (TIMESTAMP_BYTES if has_time else 0)


def next_seq(seq: int) -> int:
    return (seq + 1) % SEQ_MODULUS


@dataclass(frozen=True, slots=True)
class ChdrHeader:
    packet_type: PacketType
    has_time: bool
    end_of_burst: bool
    sequence: int
    length_bytes: int
    sid: StreamId

    def __post_init__(self) -> None:
        if not 0 <= self.sequence < SEQ_MODULUS:
            raise ValueError(f"sequence {self.sequence} outside 0..4095")
        if not 0 <= self.length_bytes <= 0xFFFF:
            raise ValueError(f"length {self.length_bytes} does not fit 16 bits")

    @property
    def payload_bytes(self) -> int:
        return self.length_bytes - header_overhead(self.has_time)

    def to_word(self) -> int:
        return (
            (int(self.packet_type) << 62)
            | (int(self.has_time) << 61)
            | (int(self.end_of_burst) << 60)
            | (self.sequence << 48)
            | (self.length_bytes << 32)
            | pack_sid(self.sid)
        )

    @classmethod
    def from_word(cls, word: int) -> "ChdrHeader":
        return cls(
            packet_type=PacketType((word >> 62) & 0x3),
            has_time=bool((word >> 61) & 1),
            end_of_burst=bool((word >> 60) & 1),
            sequence=(word >> 48) & 0xFFF,
            length_bytes=(word >> 32) & 0xFFFF,
            sid=unpack_sid(word & 0xFFFFFFFF),
        )


@dataclass(frozen=True, slots=True)
class ChdrPacket:
    header: ChdrHeader
    payload: bytes = b""
    timestamp: int | None = None

    @classmethod
    def build(
        cls,
        sid: StreamId,
        payload: bytes = b"",
        *,
        packet_type: PacketType = PacketType.DATA,
        sequence: int = 0,
        end_of_burst: bool = False,
        timestamp: int | None = None,
    ) -> "ChdrPacket":
        """Make a packet whose length field matches its payload."""
        payload = bytes(payload)
        has_time = timestamp is not None
        header = ChdrHeader(
            packet_type=PacketType(packet_type),
            has_time=has_time,
            end_of_burst=end_of_burst,
            sequence=sequence % SEQ_MODULUS,
            length_bytes=header_overhead(has_time) + len(payload),
            sid=sid,
        )
        return cls(header, payload, timestamp)

    @property
    def sid(self) -> StreamId:
        return self.header.sid

    @property
    def packet_type(self) -> PacketType:
        return self.header.packet_type

    @property
    def end_of_burst(self) -> bool:
        return self.header.end_of_burst


def pack_chdr(packet: ChdrPacket, mtu: int = DEFAULT_MTU) -> bytes:
    hdr = packet.header
    if len(packet.payload) > mtu:
        raise OversizeMtu(f"payload of {len(packet.payload)} bytes exceeds MTU {mtu}")
    if hdr.has_time != (packet.timestamp is not None):
        raise InconsistentLength("has_time flag disagrees with timestamp presence")
    if hdr.length_bytes != header_overhead(hdr.has_time) + len(packet.payload):
        raise InconsistentLength(
            f"declared length {hdr.length_bytes} but header+payload is "
            f"{header_overhead(hdr.has_time) + len(packet.payload)}"
        )
    parts = [_WORD64.pack(hdr.to_word())]
    if hdr.has_time:
        if not 0 <= packet.timestamp < 1 << 64:
            raise ValueError("timestamp does not fit 64 bits")
        parts.append(_WORD64.pack(packet.timestamp))
    parts.append(packet.payload)
    return b"".join(parts)


def unpack_chdr_from(buf: bytes | memoryview, offset: int = 0) -> tuple[ChdrPacket, int]:
    """Decode one packet starting at ``offset``; return it and the bytes consumed."""
    view = memoryview(buf)[offset:]
    if len(view) < HEADER_BYTES:
        raise Truncated(f"need {HEADER_BYTES} header bytes, have {len(view)}")
    (word,) = _WORD64.unpack_from(view, 0)
    hdr = ChdrHeader.from_word(word)
    minimum = header_overhead(hdr.has_time)
    if hdr.length_bytes < minimum:
        raise BadLength(f"length field {hdr.length_bytes} below minimum {minimum}")
    if len(view) < hdr.length_bytes:
        raise Truncated(f"length field says {hdr.length_bytes} bytes, have {len(view)}")
    pos = HEADER_BYTES
    timestamp = None
    if hdr.has_time:
        (timestamp,) = _WORD64.unpack_from(view, pos)
        pos += TIMESTAMP_BYTES
    payload = bytes(view[pos:hdr.length_bytes])
    return ChdrPacket(hdr, payload, timestamp), hdr.length_bytes


def unpack_chdr(buf: bytes | memoryview) -> ChdrPacket:
    return unpack_chdr_from(buf)[0]


def iter_chdr(buf: bytes) -> Iterator[ChdrPacket]:
    """Walk back-to-back packets in a buffer."""
    pos = 0
    while pos < len(buf):
        pkt, used = unpack_chdr_from(buf, pos)
        pos += used
        yield pkt


class SequenceCounter:
    """Per-SID modulo-4096 sequence numbers for a packet source."""

    def __init__(self) -> None:
        self._next: dict[int, int] = {}

    def take(self, sid: StreamId) -> int:
        key = pack_sid(sid)
        seq = self._next.get(key, 0)
        self._next[key] = next_seq(seq)
        return seq


# -- VRT ---------------------------------------------------------------------

VRT_TYPE_IF_DATA_SID = 0x1
VRT_MAX_WORDS = 0xFFFF
_VRT_T_BIT = 1 << 26


@dataclass(frozen=True, slots=True)
class VrtFrame:
    packet_count: int
    stream_id: int
    payload_words: tuple[int, ...] = field(default_factory=tuple)
    pad_bytes: int = 0

    @property
    def size_words(self) -> int:
        return len(self.payload_words) + 3

    @property
    def payload(self) -> bytes:
        raw = b"".join(_WORD32.pack(w) for w in self.payload_words)
        return raw[: len(raw) - self.pad_bytes]


def encapsulate_vrt(chdr_bytes: bytes, stream_id: int, count: int) -> bytes:
    if not 0 <= stream_id <= 0xFFFFFFFF:
        raise ValueError("stream id must be 32-bit")
    pad = (-len(chdr_bytes)) % 4
    body = bytes(chdr_bytes) + b"\x00" * pad
    size = 3 + len(body) // 4
    if size > VRT_MAX_WORDS:
        raise OversizeFrame(f"frame of {size} words exceeds {VRT_MAX_WORDS}")
    header = (VRT_TYPE_IF_DATA_SID << 28) | _VRT_T_BIT | ((count % 16) << 16) | size
    return _WORD32.pack(header) + _WORD32.pack(stream_id) + body + _WORD32.pack(pad)


def parse_vrt(frame: bytes) -> VrtFrame:
    if len(frame) % 4 or len(frame) < 12:
        raise CorruptFrame(f"frame of {len(frame)} bytes is not a whole number of >=3 words")
    (header,) = _WORD32.unpack_from(frame, 0)
    if header >> 28 != VRT_TYPE_IF_DATA_SID:
        raise CorruptFrame(f"unexpected VRT packet type {header >> 28}")
    if not header & _VRT_T_BIT:
        raise CorruptFrame("trailer flag not set")
    size = header & 0xFFFF
    if size != len(frame) // 4:
        raise CorruptFrame(f"size field {size} words, frame has {len(frame) // 4}")
    (stream_id,) = _WORD32.unpack_from(frame, 4)
    (trailer,) = _WORD32.unpack_from(frame, len(frame) - 4)
    pad = trailer & 0x3
    if trailer >> 2:
        raise CorruptFrame(f"unexpected trailer bits {trailer:#x}")
    body = frame[8:-4]
    if pad > len(body) or any(body[len(body) - pad:]):
        raise CorruptFrame("pad bytes missing or nonzero")
    words = struct.unpack(f">{len(body) // 4}I", body)
    return VrtFrame((header >> 16) & 0xF, stream_id, words, pad)


def decapsulate_vrt(frame: bytes) -> bytes:
    f = parse_vrt(frame)
    body = frame[8:-4]
    return bytes(body[: len(body) - f.pad_bytes])


# -- golden vectors ------------------------------------------------------------

def write_golden(path: str | Path, frames: Iterable[bytes]) -> None:
    Path(path).write_text("".join(f.hex() + "\n" for f in frames))


def read_golden(path: str | Path) -> list[bytes]:
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.append(bytes.fromhex(line))
    return out
