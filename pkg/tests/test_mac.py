import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdrplane.blocks import default_catalog
from sdrplane.errors import BudgetExceeded, OversizePacket, RingFull
from sdrplane.mac import DmaRing, HpBudget, MacDma, PacketFraming, hp_demand_Bps
from sdrplane.unit import Link, attach_input, attach_output, connect, run_until_idle

BLOCK = 100


def _crc_loop(capacity=16, block=BLOCK, link_cap=1 << 16, **kw):
    """MAC in front of crc_append -> crc_check, an identity chain with a status byte."""
    cat = default_catalog()
    a = cat.create_unit("crc_append", {"block_bytes": block})
    b = cat.create_unit("crc_check", {"block_bytes": block})
    connect(a, 0, b, 0, capacity=link_cap)
    tx, rx = attach_input(a, 0, link_cap), attach_output(b, 0, link_cap)
    mac = MacDma(tx, rx, PacketFraming(block), capacity=capacity, **kw)
    return mac, [a, b]


def _cycle(mac, units, rounds=3):
    for _ in range(rounds):
        mac.service()
        run_until_idle(units)
    mac.service()


def test_ring_full_at_capacity():
    mac, _ = _crc_loop(capacity=16)
    tickets = [mac.send_packet(b"x", 1) for _ in range(16)]
    assert tickets == list(range(1, 17))
    with pytest.raises(RingFull):
        mac.send_packet(b"x", 1)


def test_oversize():
    mac, _ = _crc_loop()
    with pytest.raises(OversizePacket):
        mac.send_packet(bytes(99), 99)
    assert mac.send_packet(bytes(98), 98)
    with pytest.raises(OversizePacket):
        mac.receive_packet(bytearray(4), 5)
    with pytest.raises(ValueError):
        mac.receive_packet(b"fixed", 5)


def test_single_send_single_irq_and_payload():
    sent, got = [], []
    mac, units = _crc_loop(sent_IRQ=sent.append, received_IRQ=got.append)
    buf = bytearray(98)
    rt = mac.receive_packet(buf, 98)
    st_ = mac.send_packet(b"hello", 5)
    _cycle(mac, units)
    assert [(c.kind, c.ticket, c.length) for c in sent] == [("sent_IRQ", st_, 5)]
    assert [(c.kind, c.ticket, c.length) for c in got] == [("received_IRQ", rt, 5)]
    assert bytes(buf[:5]) == b"hello"
    _cycle(mac, units)
    assert len(sent) == 1 and len(got) == 1 and mac.completions.qsize() == 2


@settings(max_examples=30)
@given(st.lists(st.binary(max_size=98), min_size=1, max_size=40))
def test_fifo_exactly_once_and_integrity(payloads):
    sent, got = [], []
    mac, units = _crc_loop(capacity=64, sent_IRQ=sent.append, received_IRQ=got.append)
    bufs = [bytearray(98) for _ in payloads]
    rx_tickets = [mac.receive_packet(b, 98) for b in bufs]
    tx_tickets = [mac.send_packet(p, len(p)) for p in payloads]
    _cycle(mac, units)
    assert [c.ticket for c in sent] == tx_tickets
    assert [c.ticket for c in got] == rx_tickets
    assert [bytes(b[:c.length]) for b, c in zip(bufs, got)] == payloads


def test_rx_overflow_drops_oldest():
    mac, units = _crc_loop(capacity=16)
    payloads = [bytes([i]) * 3 for i in range(17)]
    for p in payloads[:16]:
        mac.send_packet(p, 3)
    _cycle(mac, units)
    mac.send_packet(payloads[16], 3)
    _cycle(mac, units)
    s = mac.stats()
    assert s["rx_dropped"] == 1 and s["rx_ring"] == 16
    assert s["rx_arrivals"] == s["rx_delivered"] + s["rx_dropped"] + s["rx_ring"]
    # the oldest went; a posted buffer now gets the next oldest
    buf = bytearray(98)
    mac.receive_packet(buf, 98)
    assert bytes(buf[:3]) == payloads[1]
    assert mac.read_rx_ring() == payloads[2]


def test_bad_crc_blocks_are_counted_not_delivered():
    tx, rx = Link(4096, "byte"), Link(4096, "byte")
    mac = MacDma(tx, rx, PacketFraming(8))
    rx.try_push(np.frombuffer(PacketFraming(8).frame(b"ok") + b"\x01", dtype=np.uint8))
    rx.try_push(np.frombuffer(PacketFraming(8).frame(b"no") + b"\x00", dtype=np.uint8))
    mac.service()
    assert mac.read_rx_ring() == b"ok" and mac.stats()["rx_bad_blocks"] == 1


def test_bit_links_and_threads():
    tx, rx = Link(1 << 16, "bit"), Link(1 << 16, "bit")
    mac = MacDma(tx, rx, PacketFraming(16, status_byte=False))
    mac.start()
    try:
        buf = bytearray(14)
        mac.receive_packet(buf, 14)
        t = mac.send_packet(b"\x0f\xf0", 2)
        rx.push(tx.pop(16 * 8, timeout=2))  # identity "chain"
        c1 = mac.completions.get(timeout=2)
        c2 = mac.completions.get(timeout=2)
    finally:
        mac.close()
    assert {c1.kind, c2.kind} == {"sent_IRQ", "received_IRQ"} and bytes(buf[:2]) == b"\x0f\xf0"
    assert t == 1


def test_no_completion_after_close():
    mac, units = _crc_loop()
    mac.send_packet(b"x", 1)
    mac.close()
    _cycle(mac, units)
    mac.dispatch()
    assert mac.completions.qsize() == 0


def test_dma_ring_wraps():
    r = DmaRing("rx", 3)
    for i in range(5):
        r.push_drop_oldest(i)
    assert [r.pop(), r.pop(), r.pop(), r.pop()] == [2, 3, 4, None]
    with pytest.raises(ValueError):
        DmaRing("up")


def test_hp_budget():
    hp = HpBudget()
    assert hp.set([2.4e9] * 4) == [2.4e9] * 4
    with pytest.raises(BudgetExceeded):
        hp.set([9.6e9, 1, 0, 0])
    with pytest.raises(BudgetExceeded):
        hp.set([1, 1, 1, -1])
    with pytest.raises(BudgetExceeded):
        hp.set([1, 1, 1])
    assert hp_demand_Bps(80e6) == 3.2e8
    assert hp.check([3.2e8, 0, 0, 0])["ok"]
    assert not hp.check([2.5e9, 0, 0, 0])["ok"]
