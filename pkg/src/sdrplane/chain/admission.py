"""Admission control: resources, throughput and latency against the platform.

Latency arithmetic is exact (``Fraction``): a unit contributes
``latency_cycles / clock_hz`` and every crossbar traversal adds the
platform's hop latency.  The verdict is therefore a pure function of the
declared numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

from ..unit import Catalog, LinkKind
from .platform import PlatformModel, ResourceBudget
from .spec import ChainGraph, topo_order


@dataclass
class AdmissionReport:
    chain: str
    resource_ok: bool
    throughput_ok: bool
    latency_ok: bool
    resource: list[dict] = field(default_factory=list)
    throughput: list[dict] = field(default_factory=list)
    latency: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.resource_ok and self.throughput_ok and self.latency_ok

    def failures(self) -> list[str]:
        out = []
        out += [f"resource {d['item']}" for d in self.resource if not d["ok"]]
        out += [f"throughput {d['unit']}" for d in self.throughput if not d["ok"]]
        if not self.latency_ok:
            out.append("latency")
        return out

    def to_dict(self) -> dict:
        return {
            "chain": self.chain,
            "admitted": self.ok,
            "resource_ok": self.resource_ok,
            "throughput_ok": self.throughput_ok,
            "latency_ok": self.latency_ok,
            "resource": self.resource,
            "throughput": self.throughput,
            "latency": self.latency,
        }

    def render(self) -> str:
        def flag(ok):
            return "ok" if ok else "FAIL"

        lines = [f"chain: {self.chain}", f"resource: {flag(self.resource_ok)}"]
        for d in self.resource:
            lines.append(f"  {d['item']}: demanded={d['demanded']} available={d['available']} {flag(d['ok'])}")
        lines.append(f"throughput: {flag(self.throughput_ok)}")
        for d in self.throughput:
            lines.append(
                f"  {d['unit']}: demanded_sps={d['demanded_sps']:.6g} available_sps={d['available_sps']:.6g} "
                f"{flag(d['ok'])}" + (f" ({d['reason']})" if d.get("reason") else "")
            )
        lat = self.latency
        budget = "none" if lat.get("budget_us") is None else f"{lat['budget_us']:.6g}"
        lines.append(f"latency: {flag(self.latency_ok)}")
        lines.append(f"  critical_path_us={lat.get('critical_path_us', 0):.6g} budget_us={budget} "
                     f"path={'>'.join(lat.get('path', []))}")
        lines.append(f"verdict: {'admitted' if self.ok else 'rejected'}")
        return "\n".join(lines) + "\n"


# -- rate propagation ---------------------------------------------------------------

def unit_io(graph: ChainGraph, catalog: Catalog, name: str) -> tuple[int, int]:
    entry = catalog.get(graph.unit(name).kind)
    if entry.io_counts is None:
        return entry.descriptor.samples_in_per_step, entry.descriptor.samples_out_per_step
    return entry.io_counts(graph.unit_params(name))


def unit_rates(graph: ChainGraph, catalog: Catalog) -> dict[str, tuple[float, float]]:
    """(input item rate, output item rate) demanded at each unit."""
    order = topo_order(graph) or topo_order(graph, direct_only=True)
    incoming: dict[tuple[str, int], tuple[str, int]] = {l.dst: l.src for l in graph.links}
    rates: dict[str, tuple[float, float]] = {}
    for name in order:
        desc = graph.descriptors[name]
        port_rates = []
        for p in range(desc.n_inputs):
            src = incoming.get((name, p))
            if src is None:
                port_rates.append(graph.source_rate((name, p)))
            else:
                port_rates.append(rates.get(src[0], (0.0, 0.0))[1])
        rate_in = max(port_rates, default=0.0)
        n_in, n_out = unit_io(graph, catalog, name)
        rate_out = rate_in * n_out / n_in if n_in else 0.0
        rates[name] = (rate_in, rate_out)
    return rates


def throughput_key(graph: ChainGraph, name: str) -> str:
    u = graph.unit(name)
    if u.shared is not None:
        return f"shared:{u.shared}"
    return f"{graph.name}/{name}"


def unit_clock(graph: ChainGraph, name: str, platform: PlatformModel) -> float:
    hz = graph.unit(name).clock_hz
    return platform.fabric_clock_hz if hz is None else hz


# -- latency ------------------------------------------------------------------------

def critical_path(graph: ChainGraph, platform: PlatformModel) -> tuple[Fraction, list[str]]:
    order = topo_order(graph)
    links = list(graph.links)
    if order is None:
        # feedback through the crossbar: drop backward crossbar edges
        order = topo_order(graph, direct_only=True)
        pos = {n: i for i, n in enumerate(order)}
        links = [l for l in links if l.via is LinkKind.DIRECT or pos[l.src[0]] < pos[l.dst[0]]]
    preds: dict[str, list[tuple[str, Fraction]]] = {n: [] for n in order}
    hop = Fraction(platform.crossbar_hop_latency_s)
    for l in links:
        w = hop if l.via is LinkKind.CROSSBAR else Fraction(0)
        preds[l.dst[0]].append((l.src[0], w))
    dist: dict[str, Fraction] = {}
    back: dict[str, str | None] = {}
    for n in order:
        own = Fraction(graph.descriptors[n].latency_cycles) / Fraction(unit_clock(graph, n, platform))
        best, via = Fraction(0), None
        for p, w in preds[n]:
            if via is None or dist[p] + w > best:
                best, via = dist[p] + w, p
        dist[n] = own + best
        back[n] = via
    end = max(order, key=lambda n: dist[n])
    path = [end]
    while back[path[-1]] is not None:
        path.append(back[path[-1]])
    return dist[end], path[::-1]


# -- the checks ---------------------------------------------------------------------

def static_cost(graph: ChainGraph, local_device: int, hosted_shared: Iterable[str] = ()) -> tuple[int, int]:
    """Static-region cells/DSP a chain would add (PRR, remote and already-hosted shared units excluded)."""
    hosted = set(hosted_shared)
    seen_shared: set[str] = set()
    cells = dsp = 0
    for u in graph.units:
        if u.prr is not None or (u.node is not None and u.node != local_device):
            continue
        if u.shared is not None:
            if u.shared in hosted or u.shared in seen_shared:
                continue
            seen_shared.add(u.shared)
        d = graph.descriptors[u.name]
        cells += d.cost_logic_cells
        dsp += d.cost_dsp_slices
    return cells, dsp


def validate(graph: ChainGraph, platform: PlatformModel, catalog: Catalog, *,
             budget: ResourceBudget | None = None,
             existing: Iterable[ChainGraph] = (),
             hosted_shared: dict[str, tuple[str, dict]] | None = None,
             local_device: int = 0) -> AdmissionReport:
    """Check one chain against the platform given what is already deployed.

    ``hosted_shared`` maps shared-unit names already instantiated to their
    (kind, params); ``existing`` are the graphs already deployed.
    """
    budget = budget or ResourceBudget(platform)
    existing = list(existing)
    hosted_shared = dict(hosted_shared or {})

    # resources -----------------------------------------------------------------
    resource: list[dict] = []
    cells, dsp = static_cost(graph, local_device, hosted_shared)
    free_cells, free_dsp = budget.free
    resource.append({"item": "logic_cells", "demanded": cells, "available": free_cells,
                     "ok": cells <= free_cells})
    resource.append({"item": "dsp_slices", "demanded": dsp, "available": free_dsp, "ok": dsp <= free_dsp})

    by_prr: dict[int, list[str]] = {}
    for u in graph.units:
        if u.prr is not None:
            by_prr.setdefault(u.prr, []).append(u.name)
    for prr_id, names in sorted(by_prr.items()):
        part = budget.prrs.get(prr_id)
        c = sum(graph.descriptors[n].cost_logic_cells for n in names)
        d = sum(graph.descriptors[n].cost_dsp_slices for n in names)
        if part is None:
            resource.append({"item": f"prr{prr_id}", "demanded": [c, d], "available": None, "ok": False,
                             "reason": "no such PRR"})
            continue
        free = part.occupant is None
        resource.append({
            "item": f"prr{prr_id}", "demanded": [c, d],
            "available": [part.spec.size_logic_cells, part.spec.size_dsp_slices] if free else [0, 0],
            "ok": free and part.fits(c, d),
            **({} if free else {"reason": f"occupied by {part.occupant[0]}"}),
        })

    # a shared name must always denote the same kind and parameters
    declared = dict(hosted_shared)
    for g in existing + [graph]:
        for u in g.units:
            if u.shared is None:
                continue
            sig = (u.kind, g.unit_params(u.name))
            prev = declared.setdefault(u.shared, sig)
            if prev != sig:
                resource.append({"item": f"shared:{u.shared}", "demanded": list(sig[:1]),
                                 "available": list(prev[:1]), "ok": False,
                                 "reason": "shared unit redeclared with different kind or params"})

    # throughput ------------------------------------------------------------------
    demand: dict[str, list[float]] = {}
    owners: dict[str, tuple[ChainGraph, str]] = {}
    for g in existing + [graph]:
        rates = unit_rates(g, catalog)
        for name, (rin, rout) in rates.items():
            key = throughput_key(g, name)
            acc = demand.setdefault(key, [0.0, 0.0])
            acc[0] += rin
            acc[1] += rout
            if g is graph:
                owners[key] = (g, name)
    throughput: list[dict] = []
    for key, (g, name) in sorted(owners.items()):
        desc = g.descriptors[name]
        clock = unit_clock(g, name, platform)
        _, n_out = unit_io(g, catalog, name)
        physical = n_out * clock / desc.step_cycles
        rin, rout = demand[key]
        entry = {"unit": key, "demanded_sps": rin, "available_sps": float(desc.throughput_sps),
                 "demanded_out_sps": rout, "physical_out_sps": physical, "clock_hz": clock, "ok": True}
        if clock > platform.fabric_clock_hz:
            entry.update(ok=False, reason=f"clock {clock:.6g} Hz above fabric maximum")
        elif rin > desc.throughput_sps:
            entry.update(ok=False, reason="input rate above modeled throughput")
        elif rout > physical:
            entry.update(ok=False, reason="output rate above clock-limited throughput")
        throughput.append(entry)

    # latency -----------------------------------------------------------------------
    path_s, path = critical_path(graph, platform)
    budget_s = graph.latency_budget_s
    latency_ok = budget_s is None or path_s <= budget_s
    latency = {
        "critical_path_s": float(path_s),
        "critical_path_us": float(path_s * 1_000_000),
        "budget_us": None if budget_s is None else float(budget_s * 1_000_000),
        "path": path,
        "ok": latency_ok,
    }
    return AdmissionReport(
        chain=graph.name,
        resource_ok=all(d["ok"] for d in resource),
        throughput_ok=all(d["ok"] for d in throughput),
        latency_ok=latency_ok,
        resource=resource,
        throughput=throughput,
        latency=latency,
    )


def validate_set(graphs: list[ChainGraph], platform: PlatformModel, catalog: Catalog,
                 local_device: int = 0) -> list[AdmissionReport]:
    """Admit graphs one after another onto an empty platform."""
    budget = ResourceBudget(platform)
    reports = []
    admitted: list[ChainGraph] = []
    hosted: dict[str, tuple[str, dict]] = {}
    for i, g in enumerate(graphs):
        rep = validate(g, platform, catalog, budget=budget, existing=admitted,
                       hosted_shared=hosted, local_device=local_device)
        reports.append(rep)
        if rep.ok:
            cells, dsp = static_cost(g, local_device, hosted)
            budget.allocate(f"{i}:{g.name}", cells, dsp)
            for u in g.units:
                if u.prr is not None:
                    budget.prr(u.prr).occupant = (g.name, u.name)
                if u.shared is not None:
                    hosted.setdefault(u.shared, (u.kind, g.unit_params(u.name)))
            admitted.append(g)
    return reports


def fronthaul_rate(antennas: int, sample_rate_sps: float, bits_per_component: int) -> float:
    """I/Q fronthaul bit rate: antennas x sample rate x 2 components x bits."""
    for name, v in (("antennas", antennas), ("sample_rate_sps", sample_rate_sps),
                    ("bits_per_component", bits_per_component)):
        if isinstance(v, bool) or not v > 0:
            raise ValueError(f"{name} must be positive, got {v!r}")
    return antennas * sample_rate_sps * 2 * bits_per_component
