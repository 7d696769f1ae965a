"""RFNoC-style crossbar: SID routing among CHDR endpoints and remote nodes.

Routes are keyed by destination ``(device, endpoint)``; a key of
``(device, None)`` covers every endpoint of a remote device.  Unroutable
packets are dropped and counted, never blocked on.  Delivery into a local
endpoint is flow-controlled: ``route`` waits while the ingress queue is full.

Sample items travel as big-endian float64 I/Q pairs (16 bytes per sample);
bit and byte items as one byte each.
"""

from __future__ import annotations

import queue
import struct
import threading
from collections import defaultdict
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .chdr import (
    DEFAULT_MTU,
    ChdrPacket,
    PacketType,
    SequenceCounter,
    StreamId,
)
from .errors import DuplicateRoute, LinkDown, MalformedCommand, NoRoute, RegisterError, UnknownOffset
from .events import EventBus
from .unit import ITEM_DTYPES, UnitInstance

ITEM_WIRE_BYTES = {"sample": 16, "bit": 1, "byte": 1}
_SAMPLE_WIRE = np.dtype(">f8")

STATUS_OK = 0
STATUS_UNKNOWN_OFFSET = 1
STATUS_OUT_OF_RANGE = 2
STATUS_MALFORMED = 3  # whole request rejected; reported against offset 0xFFFFFFFF
_PAIR = struct.Struct(">II")


def items_to_bytes(items: np.ndarray, item_type: str) -> bytes:
    if item_type == "sample":
        arr = np.asarray(items, dtype=np.complex128)
        return arr.view(np.float64).astype(_SAMPLE_WIRE).tobytes()
    return np.asarray(items, dtype=np.uint8).tobytes()


def bytes_to_items(data: bytes, item_type: str) -> np.ndarray:
    width = ITEM_WIRE_BYTES[item_type]
    if len(data) % width:
        raise MalformedCommand(f"{len(data)} payload bytes is not a multiple of the {width}-byte {item_type} width")
    if item_type == "sample":
        return np.frombuffer(data, dtype=_SAMPLE_WIRE).astype(np.float64).view(np.complex128)
    return np.frombuffer(data, dtype=np.uint8).copy()


def packetize(items: np.ndarray, item_type: str, sid: StreamId, seqs: SequenceCounter,
              mtu: int = DEFAULT_MTU, end_of_burst: bool = True) -> list[ChdrPacket]:
    """Split one burst into MTU-sized Data packets; EOB marks the last one."""
    width = ITEM_WIRE_BYTES[item_type]
    per_packet = max(1, mtu // width)
    raw = items_to_bytes(items, item_type)
    step = per_packet * width
    chunks = [raw[i:i + step] for i in range(0, len(raw), step)] or [b""]
    last = len(chunks) - 1
    return [
        ChdrPacket.build(sid, c, sequence=seqs.take(sid), end_of_burst=end_of_burst and i == last)
        for i, c in enumerate(chunks)
    ]


def encode_command(writes: list[tuple[int, int]]) -> bytes:
    return b"".join(_PAIR.pack(o, v) for o, v in writes)


def decode_pairs(payload: bytes) -> list[tuple[int, int]]:
    if len(payload) % _PAIR.size:
        raise MalformedCommand(f"command payload of {len(payload)} bytes is not whole (offset, value) pairs")
    return [_PAIR.unpack_from(payload, i) for i in range(0, len(payload), _PAIR.size)]


class RouteTarget(Protocol):
    name: str

    def deliver(self, packet: ChdrPacket, timeout: float | None = None) -> None: ...


@dataclass
class PortStats:
    packets: int = 0
    bytes: int = 0
    drops: int = 0


class ChdrEndpoint:
    """A crossbar port with a bounded ingress queue."""

    def __init__(self, endpoint_id: int, crossbar: "Crossbar", capacity: int = 256) -> None:
        if not 0 <= endpoint_id <= 0xFF:
            raise ValueError("endpoint id must be 0..255")
        self.endpoint_id = endpoint_id
        self.crossbar = crossbar
        self.ingress: queue.Queue[ChdrPacket] = queue.Queue(capacity)
        self.doorbell = threading.Event()
        self.name = f"ep{endpoint_id}"

    @property
    def address(self) -> tuple[int, int]:
        return (self.crossbar.local_device, self.endpoint_id)

    def deliver(self, packet: ChdrPacket, timeout: float | None = None) -> None:
        self.ingress.put(packet, timeout=timeout)
        self.doorbell.set()

    def room(self) -> int:
        return self.ingress.maxsize - self.ingress.qsize()

    def receive(self, timeout: float | None = None) -> ChdrPacket:
        return self.ingress.get(timeout=timeout)

    def poll(self) -> ChdrPacket | None:
        try:
            return self.ingress.get_nowait()
        except queue.Empty:
            return None

    def send(self, packet: ChdrPacket, timeout: float | None = None) -> bool:
        return self.crossbar.route(packet, timeout)


class Crossbar:
    """The switch.  Routing decisions are serialized; delivery is not."""

    def __init__(self, local_device: int = 0, mtu: int = DEFAULT_MTU, events: EventBus | None = None) -> None:
        if not 0 <= local_device <= 0xFF:
            raise ValueError("device id must be 0..255")
        self._local_device = local_device
        self.mtu = mtu
        self.events = events or EventBus()
        self._routes: dict[tuple[int, int | None], RouteTarget] = {}
        self._endpoints: dict[int, ChdrEndpoint] = {}
        self._lock = threading.Lock()
        self.packets_in = 0
        self.packets_delivered = 0
        self.packets_dropped = 0
        self._stats: dict[str, PortStats] = defaultdict(PortStats)

    @property
    def local_device(self) -> int:
        return self._local_device

    # provisioning ----------------------------------------------------------------

    def add_route(self, key: tuple[int, int | None], target: RouteTarget) -> None:
        key = (int(key[0]), None if key[1] is None else int(key[1]))
        with self._lock:
            if key in self._routes:
                raise DuplicateRoute(f"route for {key} already present")
            routes = dict(self._routes)
            routes[key] = target
            self._routes = routes  # swapped whole: readers see old or new table

    def remove_route(self, key: tuple[int, int | None]) -> None:
        with self._lock:
            routes = dict(self._routes)
            routes.pop(key, None)
            self._routes = routes

    def has_route(self, key: tuple[int, int | None]) -> bool:
        return key in self._routes

    def routes(self) -> dict[tuple[int, int | None], str]:
        return {k: t.name for k, t in self._routes.items()}

    def add_endpoint(self, endpoint_id: int | None = None, capacity: int = 256,
                     factory=None) -> ChdrEndpoint:
        """Allocate an endpoint (lowest free id unless given) and route to it."""
        with self._lock:
            if endpoint_id is None:
                endpoint_id = next((i for i in range(1, 256) if i not in self._endpoints), None)
                if endpoint_id is None:
                    raise DuplicateRoute("no free endpoint ids")
            elif endpoint_id in self._endpoints:
                raise DuplicateRoute(f"endpoint {endpoint_id} already exists")
            ep = (factory or ChdrEndpoint)(endpoint_id, self, capacity)
            self._endpoints[endpoint_id] = ep
        try:
            self.add_route((self._local_device, endpoint_id), ep)
        except DuplicateRoute:
            with self._lock:
                del self._endpoints[endpoint_id]
            raise
        return ep

    def remove_endpoint(self, endpoint_id: int) -> None:
        self.remove_route((self._local_device, endpoint_id))
        with self._lock:
            self._endpoints.pop(endpoint_id, None)

    def endpoint(self, endpoint_id: int) -> ChdrEndpoint:
        return self._endpoints[endpoint_id]

    # data path ---------------------------------------------------------------------

    def lookup(self, sid: StreamId) -> RouteTarget | None:
        routes = self._routes
        return routes.get(sid.dst) or routes.get((sid.dst_device, None))

    def route(self, packet: ChdrPacket, timeout: float | None = None) -> bool:
        """Deliver to the matching target; False (and counted) if dropped."""
        with self._lock:
            self.packets_in += 1
            target = self.lookup(packet.sid)
            if target is None:
                self.packets_dropped += 1
                self._stats["noroute"].drops += 1
        if target is None:
            self.events.publish("drop", reason="NoRoute", sid=str(packet.sid))
            return False
        try:
            target.deliver(packet, timeout)
        except (LinkDown, queue.Full) as exc:
            with self._lock:
                self.packets_dropped += 1
                self._stats[target.name].drops += 1
            self.events.publish("drop", reason=type(exc).__name__, sid=str(packet.sid), port=target.name)
            return False
        with self._lock:
            self.packets_delivered += 1
            st = self._stats[target.name]
            st.packets += 1
            st.bytes += packet.header.length_bytes
        return True

    def route_or_raise(self, packet: ChdrPacket, timeout: float | None = None) -> None:
        if not self.route(packet, timeout):
            raise NoRoute(f"no route for {packet.sid}")

    def stats(self) -> dict:
        with self._lock:
            ports = {k: vars(v).copy() for k, v in sorted(self._stats.items())}
            return {
                "device": self._local_device,
                "packets_in": self.packets_in,
                "packets_delivered": self.packets_delivered,
                "packets_dropped": self.packets_dropped,
                "ports": ports,
            }


class SharedUnitEndpoint(ChdrEndpoint):
    """CHDR wrapper that time-multiplexes one unit among several flows.

    Data payloads are collected per source address until ``end_of_burst``,
    then the whole burst is processed window by window and sent on to the
    source's return address (by default the source itself).  Bursts from
    different sources never mix.  Command packets carry (offset, value)
    register writes and are answered with a Response of (offset, status).
    """

    def __init__(self, endpoint_id: int, crossbar: Crossbar, capacity: int = 256) -> None:
        super().__init__(endpoint_id, crossbar, capacity)
        self.unit: UnitInstance | None = None
        self.return_map: dict[tuple[int, int], tuple[int, int]] = {}
        self._partial: dict[tuple[int, int], list[bytes]] = defaultdict(list)
        self._seqs = SequenceCounter()
        self._lock = threading.Lock()
        self.bursts = 0
        self.errors = 0
        self.burst_log: list[tuple[tuple[int, int], int]] = []
        self.name = f"ep{endpoint_id}:shared"

    def set_return(self, src: tuple[int, int], dst: tuple[int, int]) -> None:
        self.return_map[tuple(src)] = tuple(dst)

    def clear_return(self, src: tuple[int, int]) -> None:
        self.return_map.pop(tuple(src), None)
        self._partial.pop(tuple(src), None)

    def _reply(self, request: ChdrPacket, pairs: list[tuple[int, int]]) -> None:
        sid = StreamId.between(self.address, request.sid.src)
        resp = ChdrPacket.build(sid, encode_command(pairs), packet_type=PacketType.RESPONSE,
                                sequence=self._seqs.take(sid), end_of_burst=True)
        self.crossbar.route(resp)

    def _command(self, packet: ChdrPacket) -> None:
        try:
            writes = decode_pairs(packet.payload)
        except MalformedCommand:
            self.errors += 1
            self._reply(packet, [(0xFFFFFFFF, STATUS_MALFORMED)])
            return
        statuses = []
        for offset, value in writes:
            try:
                self.unit.write_reg(offset, value)
                statuses.append((offset, STATUS_OK))
            except UnknownOffset:
                statuses.append((offset, STATUS_UNKNOWN_OFFSET))
            except RegisterError:
                statuses.append((offset, STATUS_OUT_OF_RANGE))
        self._reply(packet, statuses)

    def _burst(self, src: tuple[int, int], packet: ChdrPacket) -> None:
        unit = self.unit
        raw = b"".join(self._partial.pop(src, []))
        n_in, _ = unit.io_counts()
        try:
            items = bytes_to_items(raw, unit.descriptor.input_type)
            if n_in == 0 or items.size % n_in:
                raise MalformedCommand(f"burst of {items.size} items is not whole {n_in}-item windows")
        except MalformedCommand:
            self.errors += 1
            self._reply(packet, [(0xFFFFFFFF, STATUS_MALFORMED)])
            return
        outs = [unit.process([items[i:i + n_in]])[0] for i in range(0, items.size, n_in)]
        result = np.concatenate(outs) if outs else np.zeros(0, ITEM_DTYPES[unit.descriptor.output_type])
        dst = self.return_map.get(src, src)
        sid = StreamId.between(self.address, dst)
        for p in packetize(result, unit.descriptor.output_type, sid, self._seqs, self.crossbar.mtu):
            self.crossbar.route(p)
        self.bursts += 1
        self.burst_log.append((src, int(items.size)))

    def handle(self, packet: ChdrPacket) -> None:
        if packet.packet_type == PacketType.COMMAND:
            self._command(packet)
        elif packet.packet_type == PacketType.DATA:
            src = packet.sid.src
            self._partial[src].append(packet.payload)
            if packet.end_of_burst:
                self._burst(src, packet)

    def service(self, limit: int | None = None) -> int:
        """Handle queued ingress packets; returns how many were handled."""
        done = 0
        with self._lock:
            while limit is None or done < limit:
                pkt = self.poll()
                if pkt is None:
                    break
                self.handle(pkt)
                done += 1
        return done


def wrap_shared_unit(unit: UnitInstance, crossbar: Crossbar, endpoint_id: int | None = None,
                     capacity: int = 256) -> SharedUnitEndpoint:
    ep = crossbar.add_endpoint(endpoint_id, capacity, factory=SharedUnitEndpoint)
    ep.unit = unit
    return ep
