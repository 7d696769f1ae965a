"""Medium-access boundary: DMA-style packet rings in front of a chain.

Packets are framed into the chain's block size (2-byte big-endian length,
payload, zero padding) and enter as one CHDR Data burst each.  ``sent_IRQ``
fires once the chain has consumed every byte of the packet; received
blocks go to posted buffers in post order, or to the rx ring when none is
posted (oldest dropped on overflow).  Completions are delivered by a
dispatcher context, never from the data path.
"""

from __future__ import annotations

import itertools
import queue
import struct
import threading
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .chdr import ChdrPacket, StreamId
from .errors import BudgetExceeded, OversizePacket, RingFull
from .unit import Link

DEFAULT_SLOTS = 64
DEFAULT_SLOT_BYTES = 4096
HP_PORTS = 4
HP_TOTAL_BPS = 9.6e9
HP_BYTES_PER_SAMPLE = 4  # 16-bit I + 16-bit Q
_LEN = struct.Struct(">H")


class DmaRing:
    """Fixed ring of packet slots with head/tail indices."""

    def __init__(self, direction: str, capacity: int = DEFAULT_SLOTS, slot_size: int = DEFAULT_SLOT_BYTES) -> None:
        if direction not in ("tx", "rx"):
            raise ValueError("direction is tx or rx")
        if capacity < 1 or slot_size < 1:
            raise ValueError("ring capacity and slot size must be positive")
        self.direction = direction
        self.capacity = capacity
        self.slot_size = slot_size
        self.slots: list[object | None] = [None] * capacity
        self.head = 0  # next slot to read
        self.tail = 0  # next slot to write
        self.occupancy = 0
        self._lock = threading.Lock()

    def push(self, item) -> None:
        with self._lock:
            if self.occupancy == self.capacity:
                raise RingFull(f"{self.direction} ring full ({self.capacity} slots)")
            self._put(item)

    def push_drop_oldest(self, item) -> object | None:
        """Enqueue, evicting the oldest entry when full; returns the evicted one."""
        with self._lock:
            evicted = None
            if self.occupancy == self.capacity:
                evicted = self._take()
            self._put(item)
            return evicted

    def pop(self):
        with self._lock:
            return self._take() if self.occupancy else None

    def peek(self):
        with self._lock:
            return self.slots[self.head] if self.occupancy else None

    def _put(self, item) -> None:
        self.slots[self.tail] = item
        self.tail = (self.tail + 1) % self.capacity
        self.occupancy += 1

    def _take(self):
        item = self.slots[self.head]
        self.slots[self.head] = None
        self.head = (self.head + 1) % self.capacity
        self.occupancy -= 1
        return item

    def __len__(self) -> int:
        return self.occupancy


@dataclass(frozen=True)
class Completion:
    kind: str  # "sent_IRQ" or "received_IRQ"
    ticket: int
    length: int


class HpBudget:
    """Bandwidth split of the four HP ports between PS and PL."""

    def __init__(self, total_Bps: float = HP_TOTAL_BPS) -> None:
        self.total_Bps = total_Bps
        self.per_port_Bps = [total_Bps / HP_PORTS] * HP_PORTS
        self._lock = threading.Lock()

    def set(self, per_port_Bps) -> list[float]:
        values = [float(v) for v in per_port_Bps]
        if len(values) != HP_PORTS:
            raise BudgetExceeded(f"need {HP_PORTS} port budgets, got {len(values)}")
        if any(not v >= 0 for v in values):
            raise BudgetExceeded("port budgets must be >= 0")
        if sum(values) > self.total_Bps:
            raise BudgetExceeded(f"sum {sum(values):.6g} B/s exceeds {self.total_Bps:.6g} B/s")
        with self._lock:
            self.per_port_Bps = values
        return values

    def check(self, demand_Bps) -> dict:
        demand = [float(v) for v in demand_Bps]
        if len(demand) != HP_PORTS:
            raise ValueError(f"need {HP_PORTS} port demands, got {len(demand)}")
        with self._lock:
            budget = list(self.per_port_Bps)
        ports = [{"port": f"HP{i}", "demand_Bps": d, "budget_Bps": b, "ok": d <= b}
                 for i, (d, b) in enumerate(zip(demand, budget))]
        return {"ok": all(p["ok"] for p in ports), "ports": ports}


def hp_demand_Bps(sample_rate_sps: float) -> float:
    return sample_rate_sps * HP_BYTES_PER_SAMPLE


class PacketFraming:
    """Packet <-> fixed chain block: length prefix, payload, zero pad.

    With ``status_byte`` the received block carries one trailing byte that
    is 1 when the chain's CRC check passed.
    """

    def __init__(self, block_bytes: int, status_byte: bool = True) -> None:
        if block_bytes <= _LEN.size:
            raise ValueError("block must hold the length prefix and at least one byte")
        self.block_bytes = block_bytes
        self.status_byte = status_byte

    @property
    def max_payload(self) -> int:
        return self.block_bytes - _LEN.size

    @property
    def rx_window(self) -> int:
        return self.block_bytes + int(self.status_byte)

    def frame(self, payload: bytes) -> bytes:
        if len(payload) > self.max_payload:
            raise OversizePacket(f"{len(payload)}-byte packet exceeds the {self.max_payload}-byte block payload")
        return (_LEN.pack(len(payload)) + payload).ljust(self.block_bytes, b"\0")

    def parse(self, block: bytes) -> bytes | None:
        """Payload, or None when the status byte or length field is bad."""
        if self.status_byte and block[-1] != 1:
            return None
        (n,) = _LEN.unpack_from(block)
        if n > self.max_payload:
            return None
        return bytes(block[_LEN.size:_LEN.size + n])


class MacDma:
    def __init__(self, tx_link: Link, rx_link: Link, framing: PacketFraming, *,
                 capacity: int = DEFAULT_SLOTS, slot_size: int = DEFAULT_SLOT_BYTES,
                 sent_IRQ: Callable[[Completion], None] | None = None,
                 received_IRQ: Callable[[Completion], None] | None = None,
                 sid: StreamId | None = None) -> None:
        for link in (tx_link, rx_link):
            if link.item_type not in ("byte", "bit"):
                raise ValueError(f"MAC links carry bytes or bits, not {link.item_type}")
        self.tx_link = tx_link
        self.rx_link = rx_link
        self.framing = framing
        self.tx_ring = DmaRing("tx", capacity, slot_size)
        self.rx_ring = DmaRing("rx", capacity, slot_size)
        self.hp = HpBudget()
        self.sent_IRQ = sent_IRQ
        self.received_IRQ = received_IRQ
        self.sid = sid or StreamId(0, 0, 0, 0)
        self.completions: queue.Queue[Completion] = queue.Queue()
        self._outbox: queue.Queue[Completion | None] = queue.Queue()
        self._tx_ids = itertools.count(1)
        self._rx_ids = itertools.count(1)
        self._in_chain: deque[tuple[int, int, int]] = deque()  # (ticket, end offset, length)
        self._posted: deque[tuple[int, object, int]] = deque()  # (ticket, buffer, capacity)
        self._lock = threading.Lock()
        self._closed = False
        self._engine: threading.Thread | None = None
        self._dispatcher: threading.Thread | None = None
        self._wake = threading.Event()
        self.counters = dict(tx_accepted=0, tx_bursts=0, sent_irq=0, rx_arrivals=0, rx_delivered=0,
                             rx_dropped=0, rx_bad_blocks=0, received_irq=0, rx_ring_reads=0)
        tx_link.add_listener(self._wake)
        rx_link.add_listener(self._wake)

    # the two DMA calls -------------------------------------------------------------------

    def send_packet(self, buffer, packet_size: int) -> int:
        data = bytes(memoryview(buffer)[:packet_size])
        if packet_size > self.tx_ring.slot_size or packet_size > self.framing.max_payload or len(data) < packet_size:
            raise OversizePacket(f"{packet_size}-byte packet does not fit a "
                                 f"{min(self.tx_ring.slot_size, self.framing.max_payload)}-byte slot")
        with self._lock:
            ticket = next(self._tx_ids)
            self.tx_ring.push((ticket, data))
            self.counters["tx_accepted"] += 1
        self._wake.set()
        return ticket

    def receive_packet(self, buffer, packet_size: int) -> int:
        """Post a buffer for the next received packet."""
        view = memoryview(buffer)
        if view.readonly:
            raise ValueError("receive buffer must be writable")
        if view.nbytes < packet_size:
            raise OversizePacket(f"buffer of {view.nbytes} bytes cannot hold {packet_size}")
        with self._lock:
            ticket = next(self._rx_ids)
            self._posted.append((ticket, buffer, packet_size))
            # packets that arrived with nothing posted are handed out first
            pending = self.rx_ring.pop()
            if pending is not None:
                self.counters["rx_ring_reads"] += 1
                self._fill_posted(pending)
        return ticket

    def read_rx_ring(self) -> bytes | None:
        """Take one packet parked in the rx ring without posting a buffer."""
        return self.rx_ring.pop()

    # engine ------------------------------------------------------------------------------

    def _fill_posted(self, payload: bytes) -> None:
        ticket, buf, cap = self._posted.popleft()
        n = min(len(payload), cap)
        memoryview(buf)[:n] = payload[:n]
        self.counters["rx_delivered"] += 1
        self._complete(Completion("received_IRQ", ticket, n))

    def _complete(self, c: Completion) -> None:
        self._outbox.put(c)

    def _to_items(self, data: bytes) -> np.ndarray:
        arr = np.frombuffer(data, dtype=np.uint8)
        return np.unpackbits(arr) if self.tx_link.item_type == "bit" else arr

    def _from_items(self, items: np.ndarray) -> bytes:
        return np.packbits(items).tobytes() if self.rx_link.item_type == "bit" else items.tobytes()

    def service(self) -> int:
        """One pass of the DMA engine; returns units of work done."""
        if self._closed:
            return 0
        work = 0
        bits = 8 if self.tx_link.item_type == "bit" else 1
        with self._lock:
            # tx ring -> chain, one CHDR burst per packet
            while True:
                head = self.tx_ring.peek()
                if head is None or self.tx_link.room < self.framing.block_bytes * bits:
                    break
                ticket, data = self.tx_ring.pop()
                burst = ChdrPacket.build(self.sid, self.framing.frame(data), end_of_burst=True)
                self.tx_link.try_push(self._to_items(burst.payload))
                self._in_chain.append((ticket, self.tx_link.total_pushed, len(data)))
                self.counters["tx_bursts"] += 1
                work += 1
            # completions for packets the chain has fully consumed
            while self._in_chain and self.tx_link.total_popped >= self._in_chain[0][1]:
                ticket, _, n = self._in_chain.popleft()
                self._complete(Completion("sent_IRQ", ticket, n))
                work += 1
            # chain -> posted buffers or rx ring
            rx_bits = 8 if self.rx_link.item_type == "bit" else 1
            window = self.framing.rx_window * rx_bits
            while self.rx_link.available >= window:
                payload = self.framing.parse(self._from_items(self.rx_link.try_pop(window)))
                work += 1
                if payload is None:
                    self.counters["rx_bad_blocks"] += 1
                    continue
                self.counters["rx_arrivals"] += 1
                if self._posted:
                    self._fill_posted(payload)
                elif self.rx_ring.push_drop_oldest(payload) is not None:
                    self.counters["rx_dropped"] += 1
        if self._dispatcher is None:
            self.dispatch()
        return work

    def dispatch(self) -> int:
        """Deliver queued completions to callbacks and the pollable queue."""
        n = 0
        while True:
            try:
                c = self._outbox.get_nowait()
            except queue.Empty:
                return n
            if c is None or self._closed:
                continue
            self._deliver(c)
            n += 1

    def _deliver(self, c: Completion) -> None:
        with self._lock:
            self.counters["sent_irq" if c.kind == "sent_IRQ" else "received_irq"] += 1
        cb = self.sent_IRQ if c.kind == "sent_IRQ" else self.received_IRQ
        if cb is not None:
            cb(c)
        self.completions.put(c)

    def start(self) -> None:
        if self._engine is not None:
            return
        self._dispatcher = threading.Thread(target=self._dispatch_loop, name="mac-irq", daemon=True)
        self._dispatcher.start()
        self._engine = threading.Thread(target=self._engine_loop, name="mac-dma", daemon=True)
        self._engine.start()

    def _engine_loop(self) -> None:
        while not self._closed:
            if not self.service():
                self._wake.wait(0.002)
                self._wake.clear()

    def _dispatch_loop(self) -> None:
        while True:
            c = self._outbox.get()
            if c is None:
                return
            if not self._closed:
                self._deliver(c)

    def close(self) -> None:
        """Stop both contexts; tickets still pending never complete."""
        self._closed = True
        self._wake.set()
        self._outbox.put(None)
        for t in (self._engine, self._dispatcher):
            if t is not None:
                t.join(timeout=2)

    # HP budget pass-throughs ---------------------------------------------------------------

    def set_hp_budget(self, per_port_Bps) -> list[float]:
        return self.hp.set(per_port_Bps)

    def check_hp(self, demand_Bps) -> dict:
        return self.hp.check(demand_Bps)

    def stats(self) -> dict:
        with self._lock:
            return dict(self.counters, tx_ring=len(self.tx_ring), rx_ring=len(self.rx_ring),
                        posted=len(self._posted), in_chain=len(self._in_chain))


def set_hp_budget(budget: HpBudget, per_port_Bps) -> list[float]:
    return budget.set(per_port_Bps)


def check_hp(budget: HpBudget, demand_Bps) -> dict:
    return budget.check(demand_Bps)
