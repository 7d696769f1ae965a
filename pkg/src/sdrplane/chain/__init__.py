"""Chain specs, admission control, runtime wiring and the chain manager."""

from .admission import AdmissionReport, critical_path, fronthaul_rate, unit_rates, validate, validate_set
from .manager import ChainManager, Deployment
from .platform import PlatformModel, PrrPartition, PrrSpec, ResourceBudget
from .runtime import ChainRuntime
from .spec import ChainGraph, LinkSpec, UnitSpec, chain_from_dict, parse_chain_spec, topo_order

__all__ = [
    "AdmissionReport", "ChainGraph", "ChainManager", "ChainRuntime", "Deployment", "LinkSpec",
    "PlatformModel", "PrrPartition", "PrrSpec", "ResourceBudget", "UnitSpec", "chain_from_dict",
    "critical_path", "fronthaul_rate", "parse_chain_spec", "topo_order", "unit_rates", "validate",
    "validate_set",
]
