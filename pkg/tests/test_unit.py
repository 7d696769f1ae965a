import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdrplane.blocks import default_catalog
from sdrplane.errors import (
    DuplicateKind,
    InvalidDescriptor,
    ItemTypeMismatch,
    NoSuchPort,
    ParamOutOfRange,
    PortOccupied,
    UnknownKind,
    UnknownOffset,
    UnknownRegister,
    ValueOutOfRange,
    WouldBlock,
)
from sdrplane.unit import (
    Catalog,
    Link,
    RegisterSpec,
    UnitDescriptor,
    attach_input,
    attach_output,
    connect,
    run_until_idle,
    step,
)


def _desc(**kw):
    base = dict(kind="k", n_inputs=1, n_outputs=1, samples_in_per_step=4, samples_out_per_step=4,
                throughput_sps=1e8, latency_cycles=1, cost_logic_cells=1, cost_dsp_slices=0,
                register_map=(RegisterSpec(0x0, "gain", 0, 10, 1),))
    base.update(kw)
    return UnitDescriptor(**base)


def _gain(params, state, inputs):
    return [inputs[0] * params["gain"]]


@pytest.fixture
def catalog():
    c = Catalog()
    c.register_kind(_desc(), _gain)
    return c


ops = st.lists(st.tuples(st.booleans(), st.integers(1, 40)), max_size=60)


@given(ops, st.integers(1, 64))
def test_link_is_bounded_fifo(seq, capacity):
    link = Link(capacity, "byte")
    model: list[int] = []
    counter = 0
    for is_push, n in seq:
        if is_push:
            items = np.arange(counter, counter + n) % 256
            ok = link.try_push(items)
            assert ok == (len(model) + n <= capacity)
            if ok:
                model += list(items)
                counter += n
        else:
            got = link.try_pop(n)
            if n > len(model):
                assert got is None
            else:
                assert list(got) == model[:n]
                model = model[n:]
        assert link.available == len(model) <= capacity
    assert link.total_pushed - link.total_popped == link.available


def test_link_copies_unowned_pushes():
    link = Link(8, "byte")
    a = np.zeros(4, dtype=np.uint8)
    link.try_push(a)
    a[:] = 9
    assert list(link.try_pop(4)) == [0, 0, 0, 0]


def test_link_blocking_push_and_timeout():
    link = Link(4, "byte")
    link.push(np.ones(4))
    with pytest.raises(WouldBlock) as ei:
        link.push(np.ones(2), timeout=0.05)
    assert ei.value.pushed == 0
    with pytest.raises(WouldBlock):
        Link(4).pop(1, timeout=0.01)
    done = []
    t = threading.Thread(target=lambda: done.append(link.pop(10, timeout=2)))
    t.start()
    link.push(np.arange(6), timeout=2)
    t.join(3)
    assert list(done[0]) == [1, 1, 1, 1, 0, 1, 2, 3, 4, 5]


def test_link_validation():
    with pytest.raises(ValueError):
        Link(0)
    with pytest.raises(ValueError):
        Link(4, "word")


def test_catalog_errors(catalog):
    with pytest.raises(DuplicateKind):
        catalog.register_kind(_desc(), _gain)
    with pytest.raises(UnknownKind):
        catalog.get("nope")
    with pytest.raises(InvalidDescriptor):
        catalog.register_kind(_desc(kind="bad", throughput_sps=0), _gain)
    with pytest.raises(InvalidDescriptor):
        catalog.register_kind(_desc(kind="bad2", register_map=(RegisterSpec(0x2, "x", 0, 1, 0),)), _gain)
    with pytest.raises(InvalidDescriptor):
        catalog.register_kind(_desc(kind="bad3", input_type="word"), _gain)
    assert catalog.kinds() == ["k"]


def test_registers(catalog):
    u = catalog.create_unit("k", {"gain": 3})
    assert u.get_param("gain") == 3 and u.read_reg(0) == 3
    with pytest.raises(ValueOutOfRange):
        u.set_param("gain", 11)
    with pytest.raises(ValueOutOfRange):
        u.write_reg(0, True)
    with pytest.raises(UnknownOffset):
        u.read_reg(0x40)
    with pytest.raises(UnknownRegister):
        u.set_param("nope", 1)
    with pytest.raises(ParamOutOfRange):
        catalog.create_unit("k", {"gain": 99})
    assert u.get_param("gain") == 3


def test_step_is_atomic(catalog):
    u = catalog.create_unit("k", {"gain": 2})
    assert step(u).status == "unlinked"
    src = attach_input(u, 0, 16)
    dst = attach_output(u, 0, 6)
    src.try_push(np.arange(3))
    assert step(u).status == "blocked-on-input"
    assert src.available == 3 and dst.available == 0
    src.try_push(np.arange(5))
    assert step(u).status == "ok"
    assert step(u).status == "blocked-on-output"  # 4 in the output, room for 2
    assert src.available == 4 and dst.available == 4 and u.steps == 1
    assert np.allclose(dst.try_pop(4), 2 * np.array([0, 1, 2, 0]))


def test_register_write_commits_between_steps(catalog):
    u = catalog.create_unit("k", {"gain": 1})
    src, dst = attach_input(u, 0, 4096), attach_output(u, 0, 4096)
    src.try_push(np.ones(400))
    stop = threading.Event()

    def writer():
        g = 1
        while not stop.is_set():
            g = 3 - g
            u.set_param("gain", g)

    t = threading.Thread(target=writer)
    t.start()
    run_until_idle([u])
    stop.set()
    t.join()
    out = dst.drain().real.reshape(-1, 4)
    # every window saw one gain value, never a mix
    assert np.all(out == out[:, :1]) and set(np.unique(out)) <= {1.0, 2.0}


def test_connect_checks():
    cat = default_catalog()
    a = cat.create_unit("passthrough", name="a")
    b = cat.create_unit("passthrough", name="b")
    q = cat.create_unit("qam_map", name="q")
    connect(a, 0, b, 0)
    with pytest.raises(PortOccupied):
        connect(a, 0, b, 0)
    with pytest.raises(NoSuchPort):
        connect(b, 1, a, 0)
    with pytest.raises(ItemTypeMismatch):
        connect(b, 0, q, 0)


def test_catalog_dump_is_json_lines():
    import json
    lines = default_catalog().dump().splitlines()
    kinds = [json.loads(l)["kind"] for l in lines]
    assert kinds == sorted(kinds) and "fft" in kinds and "channel" in kinds
