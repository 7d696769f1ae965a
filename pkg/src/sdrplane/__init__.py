"""A modeled SDR radio data plane: CHDR framing, streaming processing units,
a routed crossbar, chain admission and reconfiguration, DMA rings, a mocked
RF plane, node clustering and a control service."""

from .blocks import default_catalog
from .chain import ChainManager, PlatformModel, fronthaul_rate, parse_chain_spec
from .chdr import ChdrPacket, PacketType, StreamId, pack_chdr, unpack_chdr
from .crossbar import Crossbar
from .unit import Catalog, Link, UnitDescriptor

__version__ = "0.1.0"

__all__ = [
    "Catalog", "ChainManager", "ChdrPacket", "Crossbar", "Link", "PacketType", "PlatformModel",
    "StreamId", "UnitDescriptor", "default_catalog", "fronthaul_rate", "pack_chdr", "parse_chain_spec",
    "unpack_chdr",
]
