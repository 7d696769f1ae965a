"""Builders for test catalogs and chain documents."""

from sdrplane.blocks import default_catalog
from sdrplane.unit import RegisterSpec, UnitDescriptor


def model_kind(catalog, kind, *, throughput=3.0e8, latency=0, cells=0, dsp=0, n_in=1, n_out=1,
               item="sample", block=64):
    """Register a pass-through kind with chosen model numbers."""
    desc = UnitDescriptor(
        kind=kind, n_inputs=n_in, n_outputs=n_out, samples_in_per_step=block, samples_out_per_step=block,
        throughput_sps=throughput, latency_cycles=latency, cost_logic_cells=cells, cost_dsp_slices=dsp,
        register_map=(RegisterSpec(0x0, "block", 1, 65536, block),), input_type=item, output_type=item)

    def process(params, state, inputs):
        return [inputs[0]] * n_out

    catalog.register_kind(desc, process, io_counts=lambda p: (p["block"], p["block"]))
    return catalog


def catalog_with(*kinds):
    """default catalog plus model kinds given as (name, kwargs) pairs."""
    cat = default_catalog()
    for name, kw in kinds:
        model_kind(cat, name, **kw)
    return cat


def line_chain(name, kinds, *, rate=1e6, budget_us=None, via="direct", extra=None, capacity=None):
    """A linear chain u0 -> u1 -> ...; ``kinds`` entries are kind names or unit dicts."""
    units = []
    for i, k in enumerate(kinds):
        u = {"name": f"u{i}", "kind": k} if isinstance(k, str) else {"name": f"u{i}", **k}
        units.append(u)
    links = []
    for a, b in zip(units, units[1:]):
        l = {"src": a["name"], "dst": b["name"],
             "via": "crossbar" if (via == "crossbar" or "shared" in a or "shared" in b
                                   or "node" in a or "node" in b) else "direct"}
        if capacity:
            l["capacity"] = capacity
        links.append(l)
    head = {"name": name, "sample_rate_sps": rate}
    if budget_us is not None:
        head["latency_budget_us"] = budget_us
    doc = {"chain": head, "unit": units, "link": links}
    if extra:
        doc.update(extra)
    return doc
