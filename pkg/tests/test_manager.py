import threading
import time

import numpy as np
import pytest

from helpers import catalog_with, line_chain
from sdrplane.blocks import to_q16
from sdrplane.chain.manager import ChainManager
from sdrplane.chain.platform import PlatformModel, PrrSpec
from sdrplane.errors import (
    AdmissionFailed,
    IncompatibleBoundary,
    OccupantTooLarge,
    UnknownChain,
    UnknownOffset,
    UnknownPrr,
    ValueOutOfRange,
)

RNG = np.random.default_rng(11)


def _samples(n):
    return RNG.standard_normal(n) + 1j * RNG.standard_normal(n)


def _run(m, cid, x, inp="u0.in0", out=None):
    rt = m.deployment(cid).runtime
    out = out or next(iter(rt.outputs))
    rt.inputs[inp].push(x)
    m.run_until_idle(5)
    return rt.outputs[out].drain()


def test_deploy_teardown_restores_everything():
    m = ChainManager()
    before = (m.budget.allocated, dict(m.crossbar.routes()))
    cid, rep = m.deploy(line_chain("a", ["passthrough", "fft", "passthrough"], via="crossbar"))
    assert rep.ok and cid == "chain1" and m.budget.allocated == (4400, 24)
    assert [r["id"] for r in m.list()] == ["chain1"]
    assert m.teardown(cid) == {"chain": "chain1", "discarded_items": 0}
    assert (m.budget.allocated, dict(m.crossbar.routes())) == before
    with pytest.raises(UnknownChain):
        m.teardown(cid)


def test_rejected_deploy_changes_nothing():
    cat = catalog_with(("huge", {"cells": 400_000}))
    m = ChainManager(catalog=cat)
    with pytest.raises(AdmissionFailed) as ei:
        m.deploy(line_chain("big", ["passthrough", "huge"]))
    assert not ei.value.report.ok and "logic_cells" in ei.value.report.render()
    assert m.chains == {} and m.budget.allocated == (0, 0) and m.crossbar.routes() == {}
    cid, _ = m.deploy(line_chain("ok", ["passthrough"]))
    assert cid == "chain1"


@pytest.mark.parametrize("via", ["direct", "crossbar"])
def test_stream_conservation_under_backpressure(via):
    m = ChainManager()
    doc = line_chain("s", [{"kind": "passthrough", "params": {"block": 100}},
                           {"kind": "scale", "params": {"gain_q16": to_q16(2.0), "block": 64}},
                           {"kind": "passthrough", "params": {"block": 32}}], via=via, capacity=256)
    cid, _ = m.deploy(doc)
    rt = m.deployment(cid).runtime
    x = _samples(32_000)
    got = []
    for i in range(0, x.size, 800):
        rt.inputs["u0.in0"].push(x[i:i + 800])
        m.run_until_idle(5)
        got.append(rt.outputs["u2.out0"].drain())
    assert np.array_equal(np.concatenate(got), 2 * x)


def test_pump_thread_and_live_set_param():
    m = ChainManager()
    cid, _ = m.deploy(line_chain("g", [{"kind": "scale", "params": {"block": 64}}], capacity=1 << 16),
                      start=True)
    rt = m.deployment(cid).runtime
    stop = threading.Event()

    def flip():
        g = 1
        while not stop.is_set():
            g = 3 - g
            m.set_param(cid, "u0", "gain_q16", to_q16(g))

    t = threading.Thread(target=flip)
    t.start()
    rt.inputs["u0.in0"].push(np.ones(64 * 500))
    out = rt.outputs["u0.out0"].pop(64 * 500, timeout=10).real.reshape(-1, 64)
    stop.set()
    t.join()
    m.close()
    assert np.all(out == out[:, :1]) and set(np.unique(out)) <= {1.0, 2.0}


def test_param_errors():
    m = ChainManager()
    cid, _ = m.deploy(line_chain("p", [{"kind": "qam_map", "params": {"order": 16}}]))
    assert m.set_param(cid, "u0", "order", "64")["value"] == 64 and m.get_param(cid, "u0", "order") == 64
    with pytest.raises(ValueOutOfRange):
        m.set_param(cid, "u0", "order", 8)
    with pytest.raises(UnknownOffset):
        m.set_param(cid, "zz", "order", 4)
    with pytest.raises(UnknownChain):
        m.get_param("chain9", "u0", "order")
    assert m.get_param(cid, "u0", "order") == 64


def test_shared_unit_through_manager():
    cat = catalog_with()
    m = ChainManager(catalog=cat)
    shared = {"kind": "scale", "params": {"gain_q16": to_q16(2.0), "block": 16}, "shared": "pool"}
    a, _ = m.deploy(line_chain("a", ["passthrough", shared, "passthrough"]))
    b, _ = m.deploy(line_chain("b", ["passthrough", shared, "passthrough"]))
    assert m.budget.owners()["shared:pool"] == (250, 2)
    xa, xb = _samples(640), _samples(960)
    ra, rb = m.deployment(a).runtime, m.deployment(b).runtime
    ra.inputs["u0.in0"].push(xa)
    rb.inputs["u0.in0"].push(xb)
    m.run_until_idle(5)
    assert np.allclose(ra.outputs["u2.out0"].drain(), 2 * xa)
    assert np.allclose(rb.outputs["u2.out0"].drain(), 2 * xb)
    m.set_param(a, "u1", "gain_q16", to_q16(-1.0))  # one unit, both chains see it
    assert m.get_param(b, "u1", "gain_q16") == to_q16(-1.0)
    with pytest.raises(ValueOutOfRange):
        m.set_param(a, "u1", "block", 0)
    m.teardown(a)
    assert "pool" in m.shared
    m.teardown(b)
    assert m.shared == {} and m.budget.allocated == (0, 0)


def test_reconfigure_full():
    m = ChainManager()
    m.deploy(line_chain("a", ["passthrough"]))
    m.deploy(line_chain("b", ["passthrough"]))
    res = m.reconfigure_full([line_chain("b", ["fft"]), line_chain("c", ["passthrough"])], 32_000_000)
    assert res["downtime_s"] == 0.25 and res["torn_down"] == ["chain1", "chain2"]
    assert res["restarted"] == ["b"] and res["deployed"] == ["chain3", "chain4"]
    assert m.model_time_s == 0.25 and [r["name"] for r in m.list()] == ["b", "c"]
    cat_big = line_chain("z", [{"kind": "fft"}] * 1)
    cat_big["unit"][0]["clock_hz"] = 1e9
    with pytest.raises(AdmissionFailed):
        m.reconfigure_full([cat_big], 1)
    assert [r["name"] for r in m.list()] == ["b", "c"]


def test_reconfigure_full_imposes_downtime():
    m = ChainManager(impose_downtime=True)
    t0 = time.monotonic()
    m.reconfigure_full([], 12_800_000)
    assert time.monotonic() - t0 >= 0.1


def _prr_manager():
    return ChainManager(platform=PlatformModel(prrs=(PrrSpec(0, 10000, 60), PrrSpec(1, 2000, 0))))


def test_prr_swap_and_errors():
    m = _prr_manager()
    cid, _ = m.deploy(line_chain("p", ["passthrough", {"kind": "scale", "prr": 0,
                                                        "params": {"gain_q16": to_q16(2.0)}}, "passthrough"]))
    x = _samples(640)
    assert np.allclose(_run(m, cid, x), 2 * x)
    res = m.reconfigure_prr(0, {"kind": "scale", "params": {"gain_q16": to_q16(3.0)}, "name": "s3"}, 1_280_000)
    assert res["swap_time_s"] == 0.01 and res["old"] == ["u1"] and res["new"] == ["s3"]
    assert np.allclose(_run(m, cid, x), 3 * x)
    assert m.budget.prrs[0].occupant == (cid, "s3")
    with pytest.raises(OccupantTooLarge):
        m.reconfigure_prr(0, [{"kind": "fir"}, {"kind": "fir", "name": "f2"}], 1)
    with pytest.raises(IncompatibleBoundary):
        m.reconfigure_prr(0, {"kind": "qam_map"}, 1)
    with pytest.raises(IncompatibleBoundary):
        m.reconfigure_prr(1, {"kind": "passthrough"}, 1)  # empty PRR
    with pytest.raises(UnknownPrr):
        m.reconfigure_prr(7, {"kind": "passthrough"}, 1)
    # a two-unit occupant
    res = m.reconfigure_prr(0, [{"kind": "fft", "params": {"length": 64}},
                                {"kind": "ifft", "params": {"length": 64}}], 1)
    assert res["new"] == ["prr0_0", "prr0_1"]
    assert np.allclose(_run(m, cid, x), x)
    m.teardown(cid)
    assert m.budget.prrs[0].occupant is None


def test_prr_swap_leaves_other_chain_untouched():
    m = _prr_manager()
    golden_in = _samples(64 * 300)
    ref = ChainManager()
    rc, _ = ref.deploy(line_chain("g", ["passthrough", {"kind": "fir", "params": {"ntaps": 3, "tap1": to_q16(0.5),
                                                                                 "tap2": to_q16(0.25)}}]))
    golden = _run(ref, rc, golden_in)

    g, _ = m.deploy(line_chain("g", ["passthrough", {"kind": "fir", "params": {"ntaps": 3, "tap1": to_q16(0.5),
                                                                              "tap2": to_q16(0.25)}}]),
                    start=True)
    p, _ = m.deploy(line_chain("p", ["passthrough", {"kind": "scale", "prr": 0}, "passthrough"]))
    rg = m.deployment(g).runtime
    feeder = threading.Thread(target=lambda: [rg.inputs["u0.in0"].push(golden_in[i:i + 640])
                                              for i in range(0, golden_in.size, 640)])
    feeder.start()
    for k in range(5):
        m.reconfigure_prr(0, {"kind": "scale", "params": {"gain_q16": to_q16(k + 1)}, "name": f"s{k}"}, 1000)
    feeder.join()
    out = rg.outputs["u1.out0"].pop(golden_in.size, timeout=10)
    m.close()
    assert out.tobytes() == golden.tobytes()


def test_events_are_published():
    m = ChainManager()
    q = m.events.subscribe()
    cid, _ = m.deploy(line_chain("e", ["passthrough"]))
    m.teardown(cid)
    kinds = [q.get_nowait()["event"] for _ in range(q.qsize())]
    assert kinds == ["deployed", "torn-down"]


def test_unroutable_crossbar_drop_is_reported():
    m = ChainManager()
    q = m.events.subscribe()
    from sdrplane.chdr import ChdrPacket, StreamId
    assert not m.crossbar.route(ChdrPacket.build(StreamId(0, 1, 9, 9)))
    ev = q.get_nowait()
    assert ev["event"] == "drop" and ev["reason"] == "NoRoute"
    assert m.stats()["crossbar"]["packets_dropped"] == 1
