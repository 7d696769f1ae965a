"""The chain manager: admission, deployment, parametric and structural
reconfiguration, and the data-path pump.

Structural operations (deploy, teardown, reconfigure, hosting for peers)
are serialized by one lock.  ``set_param`` and ``stats`` never take it.
A single pump context advances every chain, shared unit and hosted unit;
``pump_once`` is also callable directly for deterministic, threadless runs.
"""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from ..blocks import default_catalog
from ..chdr import ChdrPacket, PacketType, StreamId
from ..crossbar import (
    STATUS_OK,
    STATUS_UNKNOWN_OFFSET,
    Crossbar,
    SharedUnitEndpoint,
    decode_pairs,
    encode_command,
    wrap_shared_unit,
)
from ..errors import (
    AdmissionFailed,
    IncompatibleBoundary,
    InvalidChain,
    OccupantTooLarge,
    UnknownChain,
    UnknownOffset,
    ValueOutOfRange,
)
from ..events import EventBus
from ..unit import Catalog, ClockDomain, LinkKind, UnitInstance
from .admission import AdmissionReport, static_cost, validate, validate_set
from .platform import PlatformModel, ResourceBudget
from .runtime import ChainRuntime, VirtualTarget
from .spec import ChainGraph, LinkSpec, UnitSpec, coerce_param, parse_chain_spec

PRR_DRAIN_TIMEOUT_S = 0.1


@dataclass
class Deployment:
    chain_id: str
    graph: ChainGraph
    runtime: ChainRuntime
    report: AdmissionReport
    state: str = "running"
    remote: dict[str, tuple[int, str]] = field(default_factory=dict)  # unit -> (device, token)
    remote_params: dict[str, dict[str, int]] = field(default_factory=dict)
    deployed_at_s: float = 0.0

    def record(self) -> dict:
        return {
            "id": self.chain_id,
            "name": self.graph.name,
            "state": self.state,
            "units": [u.name for u in self.graph.units],
            "inputs": sorted(self.runtime.inputs),
            "outputs": sorted(self.runtime.outputs),
        }


@dataclass
class SharedHost:
    name: str
    kind: str
    params: dict[str, int]
    unit: UnitInstance
    endpoint: SharedUnitEndpoint
    users: set[str] = field(default_factory=set)


@dataclass
class HostedUnit:
    """A unit this node runs on behalf of a chain deployed elsewhere."""

    token: str
    kind: str
    params: dict[str, int]
    cost: tuple[int, int]
    unit: UnitInstance | None = None
    endpoint: SharedUnitEndpoint | None = None


def _as_graph(spec, catalog: Catalog) -> ChainGraph:
    if isinstance(spec, ChainGraph):
        return spec
    if isinstance(spec, Mapping):
        from .spec import chain_from_dict
        return chain_from_dict(spec, catalog)
    return parse_chain_spec(str(spec), catalog)


class ChainManager:
    def __init__(self, catalog: Catalog | None = None, crossbar: Crossbar | None = None,
                 platform: PlatformModel | None = None, events: EventBus | None = None, *,
                 impose_downtime: bool = False) -> None:
        self.catalog = catalog or default_catalog()
        self.events = events or (crossbar.events if crossbar else EventBus())
        self.crossbar = crossbar or Crossbar(0, events=self.events)
        self.platform = platform or PlatformModel()
        self.budget = ResourceBudget(self.platform)
        self.impose_downtime = impose_downtime
        self.chains: dict[str, Deployment] = {}
        self.shared: dict[str, SharedHost] = {}
        self.hosted: dict[str, HostedUnit] = {}
        self.peers: dict[int, Any] = {}
        self.model_time_s = 0.0
        self.reconfigurations: list[dict] = []
        self.doorbell = threading.Event()
        self._lock = threading.RLock()  # structural mutations
        self._pump_lock = threading.RLock()  # one pump pass at a time
        self._ids = itertools.count(1)
        self._tokens = itertools.count(1)
        self._thread: threading.Thread | None = None
        self._running = False
        self._ctrl_ep = None
        self._ctrl_lock = threading.Lock()

    @property
    def local_device(self) -> int:
        return self.crossbar.local_device

    # admission -------------------------------------------------------------------------

    def parse(self, spec) -> ChainGraph:
        return _as_graph(spec, self.catalog)

    def validate(self, spec) -> AdmissionReport:
        graph = self.parse(spec)
        with self._lock:
            return self._validate(graph)

    def _validate(self, graph: ChainGraph, exclude: str | None = None) -> AdmissionReport:
        existing = [d.graph for cid, d in self.chains.items() if cid != exclude]
        hosted = {n: (h.kind, h.params) for n, h in self.shared.items()}
        return validate(graph, self.platform, self.catalog, budget=self.budget, existing=existing,
                        hosted_shared=hosted, local_device=self.local_device)

    # deploy / teardown -------------------------------------------------------------------

    def deploy(self, spec, start: bool = False) -> tuple[str, AdmissionReport]:
        """Admit and instantiate a chain.  All or nothing: on failure no state changes."""
        graph = self.parse(spec)
        with self._lock:
            report = self._validate(graph)
            if not report.ok:
                raise AdmissionFailed(f"chain {graph.name} rejected: {', '.join(report.failures())}", report)
            chain_id = f"chain{next(self._ids)}"
            dep = self._instantiate(chain_id, graph, report)
        self.events.publish("deployed", chain=chain_id, name=graph.name)
        if start:
            self.start()
        return chain_id, report

    def _instantiate(self, chain_id: str, graph: ChainGraph, report: AdmissionReport) -> Deployment:
        local = self.local_device
        remote_units = [u for u in graph.units if u.node is not None and u.node != local and u.shared is None]
        reserved: dict[str, tuple[int, str]] = {}
        new_shared: list[str] = []
        cells, dsp = static_cost(graph, local, hosted_shared=[u.shared for u in graph.units if u.shared])
        self.budget.allocate(chain_id, cells, dsp)
        try:
            for u in remote_units:
                peer = self.peers.get(u.node)
                if peer is None:
                    raise AdmissionFailed(f"{u.name}: no control connection to node {u.node}", report)
                try:
                    reply = peer.call("reserve", kind=u.kind, params=graph.unit_params(u.name))
                except Exception as exc:
                    raise AdmissionFailed(f"{u.name}: node {u.node} refused reservation: {exc}", report) from None
                reserved[u.name] = (u.node, reply["token"])
            for u in graph.units:
                if u.shared is not None and u.shared not in self.shared:
                    self._host_shared(u.shared, u.kind, graph.unit_params(u.name))
                    new_shared.append(u.shared)
            dep_holder: dict[str, Deployment] = {}

            def resolve(name, egress, ret):
                return self._resolve(graph, chain_id, name, egress, ret, reserved, dep_holder)

            runtime = ChainRuntime.build(chain_id, graph, self.catalog, self.crossbar,
                                         fabric_hz=self.platform.fabric_clock_hz,
                                         doorbell=self.doorbell, resolve=resolve)
        except Exception:
            self.budget.release(chain_id)
            for name in new_shared:
                self._drop_shared(name)
            for dev, token in reserved.values():
                self._peer_release(dev, token)
            raise
        for u in graph.units:
            if u.prr is not None:
                part = self.budget.prr(u.prr)
                if part.occupant is None:
                    part.occupant = (chain_id, u.name)
                    part.occupant_kind = u.kind
            if u.shared is not None:
                self.shared[u.shared].users.add(chain_id)
        dep = Deployment(chain_id, graph, runtime, report, remote=reserved,
                         remote_params={n: graph.unit_params(n) for n in reserved},
                         deployed_at_s=self.model_time_s)
        dep_holder["dep"] = dep
        self.chains[chain_id] = dep
        self.doorbell.set()
        return dep

    def _resolve(self, graph, chain_id, name, egress, ret, reserved, dep_holder) -> VirtualTarget:
        u = graph.unit(name)
        if u.shared is not None:
            host = self.shared[u.shared]
            host.endpoint.set_return(egress, ret)
            return VirtualTarget(host.endpoint.address, host.unit.io_counts,
                                 host.endpoint.clear_return, local_ingress=host.endpoint)
        dev, token = reserved[name]
        reply = self.peers[dev].call("commit", token=token, src=list(egress), dst=list(ret))
        address = tuple(reply["address"])
        entry = self.catalog.get(u.kind)
        desc = entry.descriptor

        def window():
            dep = dep_holder.get("dep")
            params = dep.remote_params[name] if dep else graph.unit_params(name)
            if entry.io_counts is None:
                return desc.samples_in_per_step, desc.samples_out_per_step
            return entry.io_counts(params)

        return VirtualTarget(address, window, lambda src: None)

    def _host_shared(self, name: str, kind: str, params: dict[str, int]) -> SharedHost:
        unit = self.catalog.create_unit(kind, params, name=f"shared:{name}",
                                        clock=ClockDomain(hz=self.platform.fabric_clock_hz))
        ep = wrap_shared_unit(unit, self.crossbar)
        ep.doorbell = self.doorbell
        host = SharedHost(name, kind, dict(params), unit, ep)
        d = unit.descriptor
        self.budget.allocate(f"shared:{name}", d.cost_logic_cells, d.cost_dsp_slices)
        self.shared[name] = host
        return host

    def _drop_shared(self, name: str) -> None:
        host = self.shared.pop(name, None)
        if host is not None:
            self.crossbar.remove_endpoint(host.endpoint.endpoint_id)
            self.budget.release(f"shared:{name}")

    def _peer_release(self, dev: int, token: str) -> None:
        peer = self.peers.get(dev)
        if peer is None:
            return
        try:
            peer.call("release", token=token)
        except Exception as exc:  # the peer may already be gone
            self.events.publish("peer-error", device=dev, error=str(exc))

    def teardown(self, chain_id: str, drain_timeout: float = 1.0, drain: bool = True) -> dict:
        with self._lock:
            dep = self.chains.get(chain_id)
            if dep is None:
                raise UnknownChain(f"no deployed chain {chain_id!r}")
            dep.state = "draining"
            leftover = self._drain(dep, drain_timeout) if drain else dep.runtime.in_flight()
            with self._pump_lock:
                del self.chains[chain_id]
                dep.runtime.dismantle(self.crossbar)
            self.budget.release(chain_id)
            for part in self.budget.prrs.values():
                if part.occupant and part.occupant[0] == chain_id:
                    part.occupant = None
                    part.occupant_kind = None
            for name, host in list(self.shared.items()):
                host.users.discard(chain_id)
                if not host.users:
                    self._drop_shared(name)
            for dev, token in dep.remote.values():
                self._peer_release(dev, token)
            dep.state = "torn-down"
        self.events.publish("torn-down", chain=chain_id, discarded_items=leftover)
        return {"chain": chain_id, "discarded_items": leftover}

    def _drain(self, dep: Deployment, timeout: float) -> int:
        deadline = time.monotonic() + timeout
        while dep.runtime.in_flight() and time.monotonic() < deadline:
            if self._running:
                time.sleep(0.001)
            elif not self.pump_once():
                break
        return dep.runtime.in_flight()

    def deployment(self, chain_id: str) -> Deployment:
        try:
            return self.chains[chain_id]
        except KeyError:
            raise UnknownChain(f"no deployed chain {chain_id!r}") from None

    def list(self) -> list[dict]:
        return [self.chains[c].record() for c in sorted(self.chains, key=lambda c: int(c[5:]))]

    # parametric control --------------------------------------------------------------------

    def set_param(self, chain_id: str, unit: str, register: str, value) -> dict:
        dep = self.deployment(chain_id)
        spec = self._unit_spec(dep, unit)
        desc = dep.graph.descriptors[unit]
        value = coerce_param(desc, register, value) if isinstance(value, str) else value
        if spec.shared is not None:
            self._shared_command(self.shared[spec.shared], register, value)
        elif unit in dep.remote:
            dev, token = dep.remote[unit]
            self.peers[dev].call("host-set-param", token=token, register=register, value=value)
            dep.remote_params[unit][desc.register(register).name] = int(value)
        else:
            dep.runtime.units[unit].set_param(register, value)
        self.events.publish("param", chain=chain_id, unit=unit, register=register, value=int(value))
        return {"chain": chain_id, "unit": unit, "register": register, "value": int(value)}

    def get_param(self, chain_id: str, unit: str, register: str) -> int:
        dep = self.deployment(chain_id)
        spec = self._unit_spec(dep, unit)
        if spec.shared is not None:
            return self.shared[spec.shared].unit.get_param(register)
        if unit in dep.remote:
            dev, token = dep.remote[unit]
            return int(self.peers[dev].call("host-get-param", token=token, register=register)["value"])
        return dep.runtime.units[unit].get_param(register)

    def _unit_spec(self, dep: Deployment, unit: str) -> UnitSpec:
        try:
            return dep.graph.unit(unit)
        except KeyError:
            raise UnknownOffset(f"chain {dep.chain_id} has no unit {unit!r}") from None

    def _shared_command(self, host: SharedHost, register: str, value: int) -> None:
        """Register write to a shared unit as a CHDR Command through the crossbar."""
        offset = host.unit.descriptor.register(register).offset
        with self._ctrl_lock:
            if self._ctrl_ep is None:
                self._ctrl_ep = self.crossbar.add_endpoint(capacity=16)
            ep = self._ctrl_ep
            sid = StreamId.between(ep.address, host.endpoint.address)
            self.crossbar.route(ChdrPacket.build(sid, encode_command([(offset, int(value))]),
                                                 packet_type=PacketType.COMMAND))
            with self._pump_lock:
                host.endpoint.service()
            resp = ep.receive(timeout=2.0)
        (_, status), = decode_pairs(resp.payload)
        if status == STATUS_UNKNOWN_OFFSET:
            raise UnknownOffset(f"{host.kind} has no register at {offset:#x}")
        if status != STATUS_OK:
            raise ValueOutOfRange(f"{register}={value} rejected by shared unit {host.name}")

    # full reconfiguration ------------------------------------------------------------------

    def reconfigure_full(self, specs: Iterable, total_bitstream_bytes: int) -> dict:
        """Reprogram the whole fabric: every chain stops, the new set starts.

        The new set is admitted on an empty platform first; if it does not
        fit, nothing is touched.
        """
        graphs = [self.parse(s) for s in specs]
        downtime = self.platform.reconfig_seconds(total_bitstream_bytes)
        with self._lock:
            reports = validate_set(graphs, self.platform, self.catalog, self.local_device)
            bad = [r for r in reports if not r.ok]
            if bad:
                raise AdmissionFailed(f"new chain set rejected: {bad[0].chain}: {', '.join(bad[0].failures())}",
                                      bad[0])
            torn = [(cid, d.graph.name) for cid, d in self.chains.items()]
            was_running = self._running
            self.stop()
            for cid, _ in torn:
                self.teardown(cid, drain=False)
            for token in list(self.hosted):
                self.host_release(token)
            self.model_time_s += downtime
            if self.impose_downtime:
                time.sleep(downtime)
            deployed = []
            for g in graphs:
                cid, _ = self.deploy(g)
                deployed.append(cid)
            new_names = {g.name for g in graphs}
            result = {
                "kind": "full",
                "downtime_s": downtime,
                "bitstream_bytes": int(total_bitstream_bytes),
                "torn_down": [cid for cid, _ in torn],
                "restarted": sorted({name for _, name in torn} & new_names),
                "deployed": deployed,
            }
            self.reconfigurations.append(result)
            if was_running:
                self.start()
        self.events.publish("reconfigured", **result)
        return result

    # partial reconfiguration ----------------------------------------------------------------

    def reconfigure_prr(self, prr_id: int, occupant, partial_bitstream_bytes: int) -> dict:
        """Swap the sub-chain hosted by one PRR; everything else keeps streaming.

        ``occupant`` is one ``{"kind", "params", "name"?}`` mapping or a list
        of them forming a linear sub-chain.
        """
        swap_time = self.platform.reconfig_seconds(partial_bitstream_bytes)
        with self._lock:
            part = self.budget.prr(prr_id)
            entries = [occupant] if isinstance(occupant, Mapping) else list(occupant)
            if not entries:
                raise IncompatibleBoundary("occupant needs at least one unit")
            specs = []
            for i, e in enumerate(entries):
                kind = str(e["kind"])
                desc = self.catalog.descriptor(kind)
                params = {k: coerce_param(desc, k, v) for k, v in (e.get("params") or {}).items()}
                specs.append((str(e.get("name") or f"prr{prr_id}_{i}"), kind, params, desc))
            cells = sum(s[3].cost_logic_cells for s in specs)
            dsp = sum(s[3].cost_dsp_slices for s in specs)
            if not part.fits(cells, dsp):
                raise OccupantTooLarge(
                    f"occupant needs {cells} cells / {dsp} DSP, PRR {prr_id} holds "
                    f"{part.spec.size_logic_cells} / {part.spec.size_dsp_slices}")
            if part.occupant is None:
                raise IncompatibleBoundary(f"PRR {prr_id} hosts no sub-chain to attach the occupant to")
            dep = self.chains[part.occupant[0]]
            old = self._prr_group(dep.graph, prr_id)
            new_graph = self._swap_graph(dep.graph, old, specs, prr_id)
            check = self._validate(new_graph, exclude=dep.chain_id)
            if not (check.throughput_ok and check.latency_ok):
                raise AdmissionFailed(f"occupant breaks chain {dep.chain_id}: {', '.join(check.failures())}", check)

            rt = dep.runtime
            dep.state = "quiescing"
            rt.paused.add(old[0])
            internal = [l for n in old[:-1] for l in rt.units[n].outputs]
            deadline = time.monotonic() + PRR_DRAIN_TIMEOUT_S
            while any(l.available for l in internal) and time.monotonic() < deadline:
                if self._running:
                    time.sleep(0.0005)
                else:
                    self.pump_once()
            with self._pump_lock:
                discarded = sum(l.available for l in internal)
                new_units = [self.catalog.create_unit(kind, params, name=f"{dep.chain_id}/{name}",
                                                      clock=ClockDomain(hz=self.platform.fabric_clock_hz))
                             for name, kind, params, _ in specs]
                rt.replace_units(old, new_units)
                rt.paused.discard(old[0])
                rt.graph = new_graph
                dep.graph = new_graph
                part.occupant = (dep.chain_id, specs[0][0])
                part.occupant_kind = "+".join(s[1] for s in specs)
                part.partial_bitstream_bytes[part.occupant_kind] = int(partial_bitstream_bytes)
                self.model_time_s += swap_time
                if self.impose_downtime:
                    time.sleep(swap_time)
                dep.state = "running"
            self.doorbell.set()
            result = {
                "kind": "partial",
                "prr": int(prr_id),
                "chain": dep.chain_id,
                "old": old,
                "new": [s[0] for s in specs],
                "swap_time_s": swap_time,
                "bitstream_bytes": int(partial_bitstream_bytes),
                "drained": discarded == 0,
                "discarded_items": discarded,
            }
            self.reconfigurations.append(result)
        self.events.publish("reconfigured", **result)
        return result

    @staticmethod
    def _prr_group(graph: ChainGraph, prr_id: int) -> list[str]:
        members = {u.name for u in graph.units if u.prr == prr_id}
        internal = [l for l in graph.links if l.src[0] in members and l.dst[0] in members]
        heads = members - {l.dst[0] for l in internal}
        if len(heads) != 1 or len(internal) != len(members) - 1:
            raise IncompatibleBoundary(f"PRR {prr_id} sub-chain is not linear")
        order = [heads.pop()]
        nxt = {l.src[0]: l for l in internal}
        while order[-1] in nxt:
            l = nxt[order[-1]]
            if l.via is not LinkKind.DIRECT or l.src[1] or l.dst[1]:
                raise IncompatibleBoundary(f"PRR {prr_id} sub-chain must be joined port 0 to port 0, directly")
            order.append(l.dst[0])
        return order

    @staticmethod
    def _swap_graph(graph: ChainGraph, old: list[str], specs, prr_id: int) -> ChainGraph:
        d_first, d_last = graph.descriptors[old[0]], graph.descriptors[old[-1]]
        n_first, n_last = specs[0][3], specs[-1][3]
        if (n_first.n_inputs, n_first.input_type) != (d_first.n_inputs, d_first.input_type):
            raise IncompatibleBoundary(
                f"occupant input is {n_first.n_inputs}x{n_first.input_type}, "
                f"boundary needs {d_first.n_inputs}x{d_first.input_type}")
        if (n_last.n_outputs, n_last.output_type) != (d_last.n_outputs, d_last.output_type):
            raise IncompatibleBoundary(
                f"occupant output is {n_last.n_outputs}x{n_last.output_type}, "
                f"boundary needs {d_last.n_outputs}x{d_last.output_type}")
        for (_, _, _, a), (_, _, _, b) in zip(specs, specs[1:]):
            if a.n_outputs != 1 or b.n_inputs != 1 or a.output_type != b.input_type:
                raise IncompatibleBoundary(f"occupant units {a.kind}->{b.kind} do not chain")
        keep = [u.name for u in graph.units if u.name not in old]
        clash = {s[0] for s in specs} & set(keep)
        if clash or len({s[0] for s in specs}) != len(specs):
            raise IncompatibleBoundary(f"occupant unit names collide: {sorted(clash)}")
        units, descs, inserted = [], {}, False
        for u in graph.units:
            if u.name in old:
                if not inserted:
                    for name, kind, params, desc in specs:
                        units.append(UnitSpec(name, kind, params, prr=prr_id, node=u.node))
                        descs[name] = desc
                    inserted = True
                continue
            units.append(u)
            descs[u.name] = graph.descriptors[u.name]
        links = []
        for l in graph.links:
            if l.src[0] in old and l.dst[0] in old:
                continue
            src = (specs[-1][0], l.src[1]) if l.src[0] in old else l.src
            dst = (specs[0][0], l.dst[1]) if l.dst[0] in old else l.dst
            links.append(LinkSpec(src, dst, l.via, l.capacity))
        for a, b in zip(specs, specs[1:]):
            links.append(LinkSpec((a[0], 0), (b[0], 0)))
        return ChainGraph(graph.name, units, links, graph.sample_rate_sps, graph.latency_budget_s, descs)

    # hosting units for remote chains ------------------------------------------------------------

    def host_reserve(self, kind: str, params: Mapping | None = None) -> dict:
        desc = self.catalog.descriptor(kind)
        params = {k: coerce_param(desc, k, v) for k, v in (params or {}).items()}
        with self._lock:
            token = f"h{next(self._tokens)}"
            cost = (desc.cost_logic_cells, desc.cost_dsp_slices)
            try:
                self.budget.allocate(f"hosted:{token}", *cost)
            except AdmissionFailed as exc:
                free = self.budget.free
                raise AdmissionFailed(f"{exc}: needs {cost[0]} cells / {cost[1]} DSP, free {free[0]} / {free[1]}") \
                    from None
            self.hosted[token] = HostedUnit(token, kind, params, cost)
        return {"token": token, "cost": list(cost)}

    def host_commit(self, token: str, src, dst) -> dict:
        with self._lock:
            h = self._hosted(token)
            if h.endpoint is None:
                h.unit = self.catalog.create_unit(h.kind, h.params, name=f"hosted:{token}",
                                                  clock=ClockDomain(hz=self.platform.fabric_clock_hz))
                h.endpoint = wrap_shared_unit(h.unit, self.crossbar)
                h.endpoint.doorbell = self.doorbell
            h.endpoint.set_return(tuple(src), tuple(dst))
            return {"token": token, "address": list(h.endpoint.address)}

    def host_release(self, token: str) -> dict:
        with self._lock:
            h = self.hosted.pop(token, None)
            if h is None:
                return {"token": token, "released": False}
            with self._pump_lock:
                if h.endpoint is not None:
                    self.crossbar.remove_endpoint(h.endpoint.endpoint_id)
            self.budget.release(f"hosted:{token}")
            return {"token": token, "released": True}

    def host_set_param(self, token: str, register: str, value) -> dict:
        h = self._hosted(token)
        if h.unit is None:
            raise InvalidChain(f"hosted unit {token} not committed yet")
        return {"value": h.unit.set_param(register, value)}

    def host_get_param(self, token: str, register: str) -> dict:
        h = self._hosted(token)
        if h.unit is None:
            return {"value": h.params.get(register, self.catalog.descriptor(h.kind).register(register).default)}
        return {"value": h.unit.get_param(register)}

    def _hosted(self, token: str) -> HostedUnit:
        try:
            return self.hosted[token]
        except KeyError:
            raise UnknownChain(f"no hosted unit {token!r}") from None

    def add_peer(self, device: int, client) -> None:
        self.peers[int(device)] = client

    # the pump ------------------------------------------------------------------------------

    def pump_once(self) -> int:
        with self._pump_lock:
            n = 0
            for dep in list(self.chains.values()):
                n += dep.runtime.pump_once()
            for host in list(self.shared.values()):
                n += host.endpoint.service()
            for h in list(self.hosted.values()):
                if h.endpoint is not None:
                    n += h.endpoint.service()
            return n

    def run_until_idle(self, timeout: float = 10.0, settle: float = 0.0) -> int:
        """Pump until nothing moves (and, with ``settle``, nothing arrives for that long)."""
        deadline = time.monotonic() + timeout
        total = 0
        quiet_since = None
        while time.monotonic() < deadline:
            n = self.pump_once()
            total += n
            if n:
                quiet_since = None
                continue
            if settle <= 0:
                break
            now = time.monotonic()
            quiet_since = quiet_since or now
            if now - quiet_since >= settle:
                break
            self.doorbell.wait(0.001)
            self.doorbell.clear()
        return total

    def start(self) -> None:
        if self._running:
            return
        self._running = True
        self._thread = threading.Thread(target=self._loop, name="sdrplane-pump", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._running = False
        self.doorbell.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    @property
    def running(self) -> bool:
        return self._running

    def _loop(self) -> None:
        while self._running:
            try:
                n = self.pump_once()
            except Exception as exc:  # keep the data plane alive, surface the fault
                self.events.publish("pump-error", error=f"{type(exc).__name__}: {exc}")
                n = 0
                time.sleep(0.01)
            if not n:
                self.doorbell.wait(0.002)
                self.doorbell.clear()

    def close(self) -> None:
        self.stop()
        for cid in list(self.chains):
            self.teardown(cid, drain=False)
        for token in list(self.hosted):
            self.host_release(token)

    # reporting --------------------------------------------------------------------------------

    def stats(self) -> dict:
        chains = {cid: dict(dep.runtime.stats(), state=dep.state) for cid, dep in list(self.chains.items())}
        return {
            "device": self.local_device,
            "model_time_s": self.model_time_s,
            "budget": self.budget.snapshot(),
            "crossbar": self.crossbar.stats(),
            "chains": chains,
            "shared": {n: {"kind": h.kind, "users": sorted(h.users), "bursts": h.endpoint.bursts,
                           "errors": h.endpoint.errors} for n, h in sorted(self.shared.items())},
            "hosted": {t: {"kind": h.kind, "committed": h.endpoint is not None,
                           "bursts": h.endpoint.bursts if h.endpoint else 0}
                       for t, h in sorted(self.hosted.items())},
            "reconfigurations": len(self.reconfigurations),
        }
