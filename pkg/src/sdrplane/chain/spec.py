"""Chain-spec files and the ChainGraph they describe.

A chain spec is TOML with one ``[chain]`` table and repeated ``[[unit]]`` and
``[[link]]`` tables::

    [chain]
    name = "tx"
    sample_rate_sps = 20e6        # or a table {"crc0.in0" = 20e6}
    latency_budget_us = 10        # optional

    [[unit]]
    name = "crc0"
    kind = "crc_append"
    params = { block_bytes = 100 }
    # optional: prr = 0, node = 2, shared = "fftpool", clock_hz = 2e8

    [[link]]
    src = "crc0.out0"             # "crc0" alone means port 0
    dst = "coder0.in0"
    via = "direct"                # or "crossbar"
    capacity = 1024

The same structure as a single JSON object (``{"chain": {...}, "unit":
[...], "link": [...]}``) is accepted too.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..blocks import rate_code
from ..errors import (
    ChainSyntaxError,
    DanglingPort,
    InvalidChain,
    ParamOutOfRange,
    UnknownOffset,
)
from ..unit import DEFAULT_LINK_CAPACITY, Catalog, LinkKind, UnitDescriptor


@dataclass
class UnitSpec:
    name: str
    kind: str
    params: dict[str, int] = field(default_factory=dict)
    prr: int | None = None
    node: int | None = None
    shared: str | None = None
    clock_hz: float | None = None

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind, "params": dict(self.params)}
        for k in ("prr", "node", "shared", "clock_hz"):
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        return d


@dataclass
class LinkSpec:
    src: tuple[str, int]
    dst: tuple[str, int]
    via: LinkKind = LinkKind.DIRECT
    capacity: int = DEFAULT_LINK_CAPACITY

    def to_dict(self) -> dict:
        return {"src": f"{self.src[0]}.out{self.src[1]}", "dst": f"{self.dst[0]}.in{self.dst[1]}",
                "via": self.via.value, "capacity": self.capacity}


@dataclass
class ChainGraph:
    name: str
    units: list[UnitSpec]
    links: list[LinkSpec]
    sample_rate_sps: float | dict[str, float] = 0.0
    latency_budget_s: Fraction | None = None
    descriptors: dict[str, UnitDescriptor] = field(default_factory=dict, repr=False)

    def unit(self, name: str) -> UnitSpec:
        for u in self.units:
            if u.name == name:
                return u
        raise KeyError(name)

    def unit_params(self, name: str) -> dict[str, int]:
        """Full register snapshot: defaults overlaid by the spec's params."""
        desc = self.descriptors[name]
        regs = {r.name: r.default for r in desc.register_map}
        regs.update(self.unit(name).params)
        return regs

    def is_virtual(self, u: UnitSpec, local_device: int) -> bool:
        """Shared or remote units live outside the chain and sit behind the crossbar."""
        return u.shared is not None or (u.node is not None and u.node != local_device)

    def open_inputs(self) -> list[tuple[str, int]]:
        linked = {l.dst for l in self.links}
        return [(u.name, p) for u in self.units
                for p in range(self.descriptors[u.name].n_inputs) if (u.name, p) not in linked]

    def open_outputs(self) -> list[tuple[str, int]]:
        linked = {l.src for l in self.links}
        return [(u.name, p) for u in self.units
                for p in range(self.descriptors[u.name].n_outputs) if (u.name, p) not in linked]

    def source_rate(self, port: tuple[str, int]) -> float:
        if isinstance(self.sample_rate_sps, Mapping):
            key = f"{port[0]}.in{port[1]}"
            return float(self.sample_rate_sps.get(key, self.sample_rate_sps.get(port[0], 0.0)))
        return float(self.sample_rate_sps)

    def to_dict(self) -> dict:
        chain: dict[str, Any] = {"name": self.name, "sample_rate_sps": self.sample_rate_sps}
        if self.latency_budget_s is not None:
            chain["latency_budget_us"] = float(self.latency_budget_s * 1_000_000)
        return {"chain": chain, "unit": [u.to_dict() for u in self.units],
                "link": [l.to_dict() for l in self.links]}

    def copy_with_unit(self, name: str, kind: str, params: dict[str, int],
                       descriptor: UnitDescriptor) -> "ChainGraph":
        units = [UnitSpec(u.name, kind, dict(params), u.prr, u.node, u.shared, u.clock_hz)
                 if u.name == name else u for u in self.units]
        descs = dict(self.descriptors)
        descs[name] = descriptor
        return ChainGraph(self.name, units, list(self.links), self.sample_rate_sps,
                          self.latency_budget_s, descs)


def _parse_port(text: str, outputs: bool) -> tuple[str, int]:
    if not isinstance(text, str) or not text:
        raise ChainSyntaxError(f"bad port reference {text!r}")
    name, _, port = text.partition(".")
    if not port:
        return name, 0
    prefix = "out" if outputs else "in"
    if not port.startswith(prefix) or not port[len(prefix):].isdigit():
        raise DanglingPort(f"{text!r}: expected {name}.{prefix}<n>")
    return name, int(port[len(prefix):])


def coerce_param(desc: UnitDescriptor, name: str, value) -> int:
    """Validate one parameter against the kind's register map."""
    try:
        spec = desc.register(name)
    except UnknownOffset:
        raise ParamOutOfRange(f"{desc.kind} has no parameter {name!r}") from None
    if isinstance(value, str):
        text = value.strip()
        if name == "rate" and "/" in text:
            value = rate_code(text)
        else:
            try:
                value = int(text, 0)
            except ValueError:
                raise ParamOutOfRange(f"{name}={value!r} is not an integer") from None
    elif isinstance(value, float) and value.is_integer():
        value = int(value)
    return spec.validate(value, ParamOutOfRange)


def _load(text: str, fmt: str) -> dict:
    if fmt == "auto":
        fmt = "json" if text.lstrip().startswith("{") else "toml"
    try:
        return json.loads(text) if fmt == "json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ChainSyntaxError(f"chain spec does not parse as {fmt}: {exc}") from None


def parse_chain_spec(text: str, catalog: Catalog, fmt: str = "auto") -> ChainGraph:
    return chain_from_dict(_load(text, fmt), catalog)


def chain_from_dict(doc: Mapping, catalog: Catalog) -> ChainGraph:
    if not isinstance(doc, Mapping) or not isinstance(doc.get("chain"), Mapping):
        raise ChainSyntaxError("chain spec needs a [chain] section")
    head = doc["chain"]
    name = head.get("name")
    if not isinstance(name, str) or not name:
        raise ChainSyntaxError("[chain] needs a name")
    rate = head.get("sample_rate_sps", 0.0)
    if isinstance(rate, Mapping):
        rate = {str(k): float(v) for k, v in rate.items()}
    elif isinstance(rate, (int, float)) and not isinstance(rate, bool):
        rate = float(rate)
    else:
        raise ChainSyntaxError("sample_rate_sps must be a number or a table")
    budget = head.get("latency_budget_us")
    if budget is not None:
        if isinstance(budget, bool) or not isinstance(budget, (int, float)) or budget <= 0:
            raise ChainSyntaxError("latency_budget_us must be a positive number")
        budget = Fraction(str(budget)) / 1_000_000

    units: list[UnitSpec] = []
    descs: dict[str, UnitDescriptor] = {}
    raw_units = doc.get("unit", [])
    if not isinstance(raw_units, list) or not raw_units:
        raise ChainSyntaxError("chain spec needs at least one [[unit]]")
    for raw in raw_units:
        if not isinstance(raw, Mapping) or "name" not in raw or "kind" not in raw:
            raise ChainSyntaxError(f"unit entry needs name and kind: {raw!r}")
        uname, kind = str(raw["name"]), str(raw["kind"])
        if uname in descs:
            raise ChainSyntaxError(f"duplicate unit name {uname!r}")
        if "." in uname:
            raise ChainSyntaxError(f"unit name {uname!r} may not contain '.'")
        desc = catalog.descriptor(kind)  # UnknownKind
        params = raw.get("params", {}) or {}
        if not isinstance(params, Mapping):
            raise ChainSyntaxError(f"params of {uname} must be a table")
        spec = UnitSpec(
            name=uname, kind=kind,
            params={k: coerce_param(desc, k, v) for k, v in params.items()},
            prr=_opt_int(raw, "prr"), node=_opt_int(raw, "node"),
            shared=str(raw["shared"]) if raw.get("shared") is not None else None,
            clock_hz=float(raw["clock_hz"]) if raw.get("clock_hz") is not None else None,
        )
        if spec.clock_hz is not None and spec.clock_hz <= 0:
            raise ChainSyntaxError(f"clock_hz of {uname} must be positive")
        if spec.shared is not None and spec.prr is not None:
            raise ChainSyntaxError(f"{uname}: a shared unit cannot also occupy a PRR")
        units.append(spec)
        descs[uname] = desc

    links: list[LinkSpec] = []
    for raw in doc.get("link", []) or []:
        if not isinstance(raw, Mapping) or "src" not in raw or "dst" not in raw:
            raise ChainSyntaxError(f"link entry needs src and dst: {raw!r}")
        src = _parse_port(raw["src"], True)
        dst = _parse_port(raw["dst"], False)
        for (uname, port), outputs in ((src, True), (dst, False)):
            if uname not in descs:
                raise DanglingPort(f"link references undeclared unit {uname!r}")
            arity = descs[uname].n_outputs if outputs else descs[uname].n_inputs
            if port >= arity:
                side = "output" if outputs else "input"
                raise DanglingPort(f"{uname} has no {side} port {port}")
        try:
            via = LinkKind(raw.get("via", "direct"))
        except ValueError:
            raise ChainSyntaxError(f"via must be direct or crossbar, got {raw.get('via')!r}") from None
        capacity = raw.get("capacity", DEFAULT_LINK_CAPACITY)
        if isinstance(capacity, bool) or not isinstance(capacity, int) or capacity < 1:
            raise ChainSyntaxError(f"link capacity must be a positive integer, got {capacity!r}")
        links.append(LinkSpec(src, dst, via, capacity))

    graph = ChainGraph(name, units, links, rate, budget, descs)
    check_structure(graph)
    return graph


def _opt_int(raw: Mapping, key: str) -> int | None:
    v = raw.get(key)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int) or v < 0:
        raise ChainSyntaxError(f"{key} must be a non-negative integer, got {v!r}")
    return v


def check_structure(graph: ChainGraph) -> None:
    """Port uniqueness, item types, connectivity and direct-link acyclicity."""
    seen_dst, seen_src = set(), set()
    for l in graph.links:
        if l.dst in seen_dst:
            raise InvalidChain(f"{l.dst[0]}.in{l.dst[1]} has more than one incoming link")
        if l.src in seen_src:
            raise InvalidChain(f"{l.src[0]}.out{l.src[1]} drives more than one link")
        seen_dst.add(l.dst)
        seen_src.add(l.src)
        out_t = graph.descriptors[l.src[0]].output_type
        in_t = graph.descriptors[l.dst[0]].input_type
        if out_t != in_t:
            raise InvalidChain(f"link {l.src[0]}->{l.dst[0]} joins {out_t} output to {in_t} input")
        if l.src[0] == l.dst[0] and l.via is LinkKind.DIRECT:
            raise InvalidChain(f"direct self-loop on {l.src[0]}")
        for end in (l.src[0], l.dst[0]):
            u = graph.unit(end)
            if u.shared is not None and l.via is not LinkKind.CROSSBAR:
                raise InvalidChain(f"link touching shared unit {end} must use via = \"crossbar\"")

    # weak connectivity
    names = [u.name for u in graph.units]
    adj: dict[str, set[str]] = {n: set() for n in names}
    for l in graph.links:
        adj[l.src[0]].add(l.dst[0])
        adj[l.dst[0]].add(l.src[0])
    stack, seen = [names[0]], {names[0]}
    while stack:
        for nxt in adj[stack.pop()] - seen:
            seen.add(nxt)
            stack.append(nxt)
    if len(seen) != len(names):
        raise InvalidChain(f"chain {graph.name} is not connected: {sorted(set(names) - seen)} unreachable")

    if topo_order(graph, direct_only=True) is None:
        raise InvalidChain(f"chain {graph.name} has a cycle of direct links (feedback must use the crossbar)")


def topo_order(graph: ChainGraph, direct_only: bool = False) -> list[str] | None:
    """Kahn order of units, or None on a cycle."""
    names = [u.name for u in graph.units]
    indeg = {n: 0 for n in names}
    succ: dict[str, list[str]] = {n: [] for n in names}
    for l in graph.links:
        if direct_only and l.via is not LinkKind.DIRECT:
            continue
        succ[l.src[0]].append(l.dst[0])
        indeg[l.dst[0]] += 1
    ready = [n for n in names if indeg[n] == 0]
    order = []
    while ready:
        n = ready.pop(0)
        order.append(n)
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                ready.append(m)
    return order if len(order) == len(names) else None
