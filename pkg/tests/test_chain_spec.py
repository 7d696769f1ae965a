import json
from fractions import Fraction
from importlib import resources

import pytest

from helpers import line_chain
from sdrplane.blocks import default_catalog
from sdrplane.chain.spec import chain_from_dict, parse_chain_spec, topo_order
from sdrplane.errors import ChainSyntaxError, DanglingPort, InvalidChain, ParamOutOfRange, UnknownKind

CAT = default_catalog()

TOML = """
[chain]
name = "demo"
sample_rate_sps = 20e6
latency_budget_us = 10

[[unit]]
name = "a"
kind = "fft"
params = { length = 64 }

[[unit]]
name = "b"
kind = "qam_demap"
params = { order = 16, block = 64 }
prr = 0

[[link]]
src = "a.out0"
dst = "b"
via = "crossbar"
capacity = 256
"""


def test_toml_and_json_agree():
    g1 = parse_chain_spec(TOML, CAT)
    g2 = parse_chain_spec(json.dumps(g1.to_dict()), CAT)
    assert g1.to_dict() == g2.to_dict()
    assert g1.latency_budget_s == Fraction(1, 100_000)
    assert g1.unit("b").prr == 0 and g1.links[0].capacity == 256
    assert g1.unit_params("b") == {"order": 16, "block": 64}


@pytest.mark.parametrize("name", ["tx80211g.toml", "rx80211g.toml", "loopback80211g.toml", "pass4.toml"])
def test_bundled_chains_parse(name):
    text = resources.files("sdrplane.chains").joinpath(name).read_text()
    g = parse_chain_spec(text, CAT)
    assert topo_order(g) is not None


@pytest.mark.parametrize("mutate,error", [
    (lambda d: d.pop("chain"), ChainSyntaxError),
    (lambda d: d["chain"].pop("name"), ChainSyntaxError),
    (lambda d: d.update(unit=[]), ChainSyntaxError),
    (lambda d: d["unit"].append(dict(d["unit"][0])), ChainSyntaxError),
    (lambda d: d["unit"][0].update(kind="warp"), UnknownKind),
    (lambda d: d["unit"][0].update(params={"block": 0}), ParamOutOfRange),
    (lambda d: d["unit"][0].update(params={"nope": 1}), ParamOutOfRange),
    (lambda d: d["link"].append({"src": "u1", "dst": "zz"}), DanglingPort),
    (lambda d: d["link"].append({"src": "u1.out3", "dst": "u0"}), DanglingPort),
    (lambda d: d["link"].append({"src": "u1", "dst": "u0.x"}), DanglingPort),
    (lambda d: d["link"].append({"src": "u1", "dst": "u0"}), InvalidChain),  # direct cycle
    (lambda d: d["link"][0].update(via="wire"), ChainSyntaxError),
    (lambda d: d["link"][0].update(capacity=0), ChainSyntaxError),
    (lambda d: d["chain"].update(latency_budget_us=-1), ChainSyntaxError),
    (lambda d: d["chain"].update(sample_rate_sps="fast"), ChainSyntaxError),
    (lambda d: d.update(link=[]), InvalidChain),  # disconnected
    (lambda d: d["unit"][0].update(prr=-1), ChainSyntaxError),
    (lambda d: d["unit"][0].update(shared="s", prr=0), ChainSyntaxError),
    (lambda d: d["unit"][0].update(shared="s"), InvalidChain),  # shared behind a direct link
])
def test_rejections(mutate, error):
    doc = line_chain("bad", ["passthrough", "passthrough"])
    mutate(doc)
    with pytest.raises(error):
        chain_from_dict(doc, CAT)


def test_type_mismatch_and_fan_in():
    with pytest.raises(InvalidChain):
        chain_from_dict(line_chain("t", ["passthrough", "qam_map"]), CAT)
    doc = line_chain("f", ["passthrough", "passthrough", "passthrough"])
    doc["link"].append({"src": "u0", "dst": "u2"})
    with pytest.raises(InvalidChain):
        chain_from_dict(doc, CAT)


def test_crossbar_feedback_is_allowed():
    doc = line_chain("fb", ["passthrough", "passthrough"])
    doc["link"] = [{"src": "u0", "dst": "u1"}, {"src": "u1", "dst": "u0", "via": "crossbar"}]
    g = chain_from_dict(doc, CAT)
    assert topo_order(g) is None and topo_order(g, direct_only=True) == ["u0", "u1"]


def test_rate_strings_and_open_ports():
    g = chain_from_dict(line_chain("c", [{"kind": "conv_encode", "params": {"rate": "3/4"}}]), CAT)
    assert g.unit("u0").params["rate"] == 2
    assert g.open_inputs() == [("u0", 0)] and g.open_outputs() == [("u0", 0)]
