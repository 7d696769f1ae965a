"""Live wiring of one deployed chain.

Units joined by Direct links share a ``Link``.  Anything routed through the
crossbar is cut at a packetizer (pops one consumer window, emits a CHDR
burst ending in EOB) and reassembled by a depacketizer feeding the
downstream link.  Shared and remote units are *virtual*: the chain only
holds their address.  ``resolve(name, egress, ret)`` installs the host's
return-map entry so the unit's output comes back to the chain's ``ret``
endpoint.

Sends are credit-limited so that a single pump thread can never wedge
itself on a full endpoint queue: a window goes out only if the target has
room for it and the return endpoint has room for the reply.
"""

from __future__ import annotations

import math
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..chdr import PacketType, SequenceCounter, StreamId
from ..crossbar import ITEM_WIRE_BYTES, ChdrEndpoint, Crossbar, bytes_to_items, packetize
from ..errors import InvalidChain, MalformedCommand
from ..unit import (
    Catalog,
    ClockDomain,
    Link,
    LinkKind,
    UnitInstance,
    attach_input,
    attach_output,
    connect,
    step,
)
from .spec import ChainGraph, topo_order

ENDPOINT_CAPACITY = 4096  # packets
IO_CAPACITY = 1 << 16  # items on chain input/output links
REMOTE_INGRESS_PACKETS = 256
STEP_BURST = 64  # steps per unit per pump pass, keeps the round fair


def packets_for(n_items: int, item_type: str, mtu: int) -> int:
    per = max(1, mtu // ITEM_WIRE_BYTES[item_type])
    return max(1, math.ceil(n_items / per))


@dataclass
class VirtualTarget:
    """How a chain reaches a unit it does not own (shared or on another node)."""

    address: tuple[int, int]
    window: Callable[[], tuple[int, int]]  # current (in, out) items per step
    clear_return: Callable[[tuple[int, int]], None]
    local_ingress: ChdrEndpoint | None = None  # None when the unit is remote


@dataclass
class Credit:
    expected: int = 0
    received: int = 0

    @property
    def outstanding(self) -> int:
        return self.expected - self.received


class Packetizer:
    def __init__(self, link: Link, crossbar: Crossbar, sid: StreamId, seqs: SequenceCounter,
                 window: Callable[[], tuple[int, int]], *, target: VirtualTarget | None = None,
                 return_ep: ChdrEndpoint | None = None, out_type: str | None = None) -> None:
        self.link = link
        self.crossbar = crossbar
        self.sid = sid
        self.seqs = seqs
        self.window = window
        self.target = target
        self.return_ep = return_ep
        self.out_type = out_type
        self.credit = Credit() if return_ep is not None else None
        self.windows = 0

    def _credit_items(self, n_in: int, n_out: int) -> int:
        mtu = self.crossbar.mtu
        per_out = max(1, mtu // ITEM_WIRE_BYTES[self.out_type])
        cap = self.return_ep.ingress.maxsize * per_out
        if self.target is not None and self.target.local_ingress is None:
            windows = max(1, REMOTE_INGRESS_PACKETS // packets_for(n_in, self.link.item_type, mtu))
            cap = min(cap, windows * n_out)
        return max(cap, n_out)

    def pump(self) -> int:
        sent = 0
        while True:
            n_in, n_out = self.window()
            if n_in <= 0 or self.link.available < n_in:
                break
            n_pk = packets_for(n_in, self.link.item_type, self.crossbar.mtu)
            dest = self.crossbar.lookup(self.sid)
            if dest is not None and hasattr(dest, "room") and dest.room() < n_pk:
                break
            if self.credit is not None and self.credit.outstanding + n_out > self._credit_items(n_in, n_out):
                break
            items = self.link.try_pop(n_in)
            delivered = True
            for p in packetize(items, self.link.item_type, self.sid, self.seqs, self.crossbar.mtu):
                delivered &= self.crossbar.route(p, timeout=1.0)
            if self.credit is not None and delivered:
                self.credit.expected += n_out
            self.windows += 1
            sent += 1
        return sent


class Depacketizer:
    def __init__(self, endpoint: ChdrEndpoint, link: Link, credit: Credit | None = None) -> None:
        self.endpoint = endpoint
        self.link = link
        self.credit = credit
        self.pending: deque[np.ndarray] = deque()
        self.errors = 0
        self.packets = 0

    def pump(self) -> int:
        moved = 0
        while True:
            if self.pending:
                head = self.pending[0]
                k = min(head.size, self.link.room)
                if k == 0:
                    break
                self.link.try_push(head[:k])
                if k == head.size:
                    self.pending.popleft()
                else:
                    self.pending[0] = head[k:]
                moved += k
                continue
            pkt = self.endpoint.poll()
            if pkt is None:
                break
            self.packets += 1
            if pkt.packet_type != PacketType.DATA:
                self.errors += 1  # stray command/response (e.g. malformed-burst notice)
                continue
            try:
                items = bytes_to_items(pkt.payload, self.link.item_type)
            except MalformedCommand:
                self.errors += 1
                continue
            if self.credit is not None:
                self.credit.received += items.size
            if items.size:
                self.pending.append(items)
        return moved

    @property
    def idle(self) -> bool:
        return not self.pending and self.endpoint.ingress.empty()


@dataclass
class ChainRuntime:
    chain_id: str
    graph: ChainGraph
    units: dict[str, UnitInstance] = field(default_factory=dict)
    links: list[Link] = field(default_factory=list)
    inputs: dict[str, Link] = field(default_factory=dict)
    outputs: dict[str, Link] = field(default_factory=dict)
    packetizers: list[Packetizer] = field(default_factory=list)
    depacketizers: list[Depacketizer] = field(default_factory=list)
    endpoints: list[ChdrEndpoint] = field(default_factory=list)
    returns: list[tuple[VirtualTarget, tuple[int, int]]] = field(default_factory=list)
    order: list[str] = field(default_factory=list)
    paused: set[str] = field(default_factory=set)
    control_ep: ChdrEndpoint | None = None
    consumer: dict[int, UnitInstance] = field(default_factory=dict)  # id(link) -> unit reading it

    # construction -------------------------------------------------------------------

    @classmethod
    def build(cls, chain_id: str, graph: ChainGraph, catalog: Catalog, crossbar: Crossbar, *,
              fabric_hz: float, doorbell: threading.Event,
              resolve: Callable[[str, tuple[int, int], tuple[int, int]], VirtualTarget]) -> "ChainRuntime":
        rt = cls(chain_id, graph)
        try:
            rt._build(catalog, crossbar, fabric_hz, doorbell, resolve)
        except Exception:
            rt.dismantle(crossbar)
            raise
        return rt

    def _endpoint(self, crossbar: Crossbar, doorbell: threading.Event) -> ChdrEndpoint:
        ep = crossbar.add_endpoint(capacity=ENDPOINT_CAPACITY)
        ep.doorbell = doorbell
        self.endpoints.append(ep)
        return ep

    def _build(self, catalog, crossbar, fabric_hz, doorbell, resolve) -> None:
        g = self.graph
        local = crossbar.local_device
        virtual = {u.name for u in g.units if g.is_virtual(u, local)}
        for u in g.units:
            if u.name in virtual:
                d = g.descriptors[u.name]
                if d.n_inputs != 1 or d.n_outputs != 1:
                    raise InvalidChain(f"{u.name}: shared or remote units must have one input and one output")
                continue
            clock = ClockDomain(hz=u.clock_hz or fabric_hz)
            self.units[u.name] = catalog.create_unit(u.kind, u.params, name=f"{self.chain_id}/{u.name}",
                                                     clock=clock)
        for port in g.open_inputs() + g.open_outputs():
            if port[0] in virtual:
                raise InvalidChain(f"open port on {port[0]}: chain inputs and outputs must be local units")

        seqs = SequenceCounter()
        out_of = {l.src: l for l in g.links}
        for l in g.links:
            a, b = l.src[0], l.dst[0]
            if a in virtual and b in virtual:
                raise InvalidChain(f"{a}->{b}: two shared/remote units cannot be linked to each other")
            if a in virtual:
                continue  # wired together with the link feeding it
            ua = self.units[a]
            if b not in virtual and l.via is LinkKind.DIRECT:
                self.links.append(connect(ua, l.src[1], self.units[b], l.dst[1], l.capacity, LinkKind.DIRECT))
                continue
            out_link = attach_output(ua, l.src[1], l.capacity)
            self.links.append(out_link)
            if b not in virtual:
                ub = self.units[b]
                ep = self._endpoint(crossbar, doorbell)
                in_link = attach_input(ub, l.dst[1], l.capacity)
                self.links.append(in_link)
                sid = StreamId.between(ep.address, ep.address)
                self.consumer[id(in_link)] = ub
                self.packetizers.append(Packetizer(out_link, crossbar, sid, seqs,
                                                   lambda k=id(in_link): self.consumer[k].io_counts()))
                self.depacketizers.append(Depacketizer(ep, in_link))
                continue
            # through a shared or remote unit and back
            onward = out_of.get((b, 0))
            if onward is None:
                raise InvalidChain(f"output of {b} must feed a unit of the chain")
            egress = self._endpoint(crossbar, doorbell)
            ret = self._endpoint(crossbar, doorbell)
            target = resolve(b, egress.address, ret.address)
            self.returns.append((target, egress.address))
            in_link = attach_input(self.units[onward.dst[0]], onward.dst[1], onward.capacity)
            self.links.append(in_link)
            sid = StreamId.between(egress.address, target.address)
            pk = Packetizer(out_link, crossbar, sid, seqs, target.window, target=target, return_ep=ret,
                            out_type=g.descriptors[b].output_type)
            self.packetizers.append(pk)
            self.depacketizers.append(Depacketizer(ret, in_link, pk.credit))

        for name, port in g.open_inputs():
            link = attach_input(self.units[name], port, IO_CAPACITY)
            link.add_listener(doorbell)
            self.inputs[f"{name}.in{port}"] = link
        for name, port in g.open_outputs():
            link = attach_output(self.units[name], port, IO_CAPACITY)
            link.add_listener(doorbell)
            self.outputs[f"{name}.out{port}"] = link
        order = topo_order(g, direct_only=True) or [u.name for u in g.units]
        self.order = [n for n in order if n in self.units]

    def dismantle(self, crossbar: Crossbar) -> None:
        for target, src in self.returns:
            try:
                target.clear_return(src)
            except Exception:
                pass
        self.returns.clear()
        for ep in self.endpoints:
            crossbar.remove_endpoint(ep.endpoint_id)
        self.endpoints.clear()
        if self.control_ep is not None:
            crossbar.remove_endpoint(self.control_ep.endpoint_id)
            self.control_ep = None

    # execution -----------------------------------------------------------------------

    def pump_once(self) -> int:
        progressed = 0
        for d in self.depacketizers:
            progressed += d.pump()
        for name in self.order:
            if name in self.paused:
                continue
            u = self.units[name]
            for _ in range(STEP_BURST):
                if not step(u).progressed:
                    break
                progressed += 1
        for p in self.packetizers:
            progressed += p.pump()
        return progressed

    def in_flight(self) -> int:
        """Items held inside the chain (excluding its external output links)."""
        outs = {id(l) for l in self.outputs.values()}
        held = sum(l.available for l in self.links if id(l) not in outs)
        held += sum(l.available for l in self.inputs.values())
        held += sum(int(sum(a.size for a in d.pending)) + d.endpoint.ingress.qsize() for d in self.depacketizers)
        held += sum(p.credit.outstanding for p in self.packetizers if p.credit is not None)
        return held

    def replace_units(self, old: list[str], new: list[UnitInstance]) -> None:
        """Swap a linear group of units for another, keeping the boundary links.

        The caller has drained the group; links internal to it are rebuilt.
        """
        first, last = self.units[old[0]], self.units[old[-1]]
        boundary_in = list(first.inputs)
        boundary_out = list(last.outputs)
        internal = {id(l) for name in old[:-1] for l in self.units[name].outputs}
        self.links = [l for l in self.links if id(l) not in internal]
        for name in old:
            del self.units[name]
        for a, b in zip(new, new[1:]):
            self.links.append(connect(a, 0, b, 0))
        new[0].inputs = boundary_in
        new[-1].outputs = boundary_out
        # depacketizers and packetizers hold the boundary Link objects, so they carry over
        for l in boundary_in:
            if id(l) in self.consumer:
                self.consumer[id(l)] = new[0]
        for u in new:
            self.units[u.name.split("/", 1)[1]] = u
        pos = self.order.index(old[0])
        self.order = [n for n in self.order if n not in old]
        for i, u in enumerate(new):
            self.order.insert(pos + i, u.name.split("/", 1)[1])

    def stats(self) -> dict:
        return {
            "units": {n: {"kind": u.kind, "steps": u.steps, "params": u.params} for n, u in self.units.items()},
            "inputs": {k: {"available": l.available, "pushed": l.total_pushed} for k, l in self.inputs.items()},
            "outputs": {k: {"available": l.available, "popped": l.total_popped, "pushed": l.total_pushed}
                        for k, l in self.outputs.items()},
            "crossbar_windows": sum(p.windows for p in self.packetizers),
            "depacketizer_errors": sum(d.errors for d in self.depacketizers),
            "in_flight": self.in_flight(),
            "paused": sorted(self.paused),
        }
