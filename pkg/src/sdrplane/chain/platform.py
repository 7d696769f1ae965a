"""Modeled hybrid-FPGA platform: capacities, PRR partitions and the budget."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from fractions import Fraction

from ..errors import AdmissionFailed, UnknownPrr

LOGIC_CELLS = 350_000
DSP_SLICES = 900
FABRIC_CLOCK_HZ = 3.0e8
PCAP_BPS = 128e6
HP_TOTAL_BPS = 9.6e9
CROSSBAR_HOP_S = Fraction(1, 1_000_000)


@dataclass(frozen=True)
class PrrSpec:
    prr_id: int
    size_logic_cells: int
    size_dsp_slices: int


@dataclass(frozen=True)
class PlatformModel:
    logic_cells_total: int = LOGIC_CELLS
    dsp_slices_total: int = DSP_SLICES
    fabric_clock_hz: float = FABRIC_CLOCK_HZ
    pcap_throughput_Bps: float = PCAP_BPS
    hp_total_Bps: float = HP_TOTAL_BPS
    crossbar_hop_latency_s: Fraction = CROSSBAR_HOP_S
    prrs: tuple[PrrSpec, ...] = ()

    def __post_init__(self) -> None:
        for name in ("logic_cells_total", "dsp_slices_total", "fabric_clock_hz",
                     "pcap_throughput_Bps", "hp_total_Bps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.crossbar_hop_latency_s < 0:
            raise ValueError("crossbar hop latency must be >= 0")
        ids = [p.prr_id for p in self.prrs]
        if len(set(ids)) != len(ids):
            raise ValueError("PRR ids must be unique")
        if sum(p.size_logic_cells for p in self.prrs) > self.logic_cells_total or \
                sum(p.size_dsp_slices for p in self.prrs) > self.dsp_slices_total:
            raise ValueError("PRR partitions exceed the fabric")

    @property
    def static_logic_cells(self) -> int:
        return self.logic_cells_total - sum(p.size_logic_cells for p in self.prrs)

    @property
    def static_dsp_slices(self) -> int:
        return self.dsp_slices_total - sum(p.size_dsp_slices for p in self.prrs)

    def reconfig_seconds(self, nbytes: int) -> float:
        """PCAP transfer time for a (partial) bitstream."""
        if nbytes < 0:
            raise ValueError("bitstream size must be >= 0")
        return float(Fraction(int(nbytes)) / Fraction(self.pcap_throughput_Bps))


@dataclass
class PrrPartition:
    spec: PrrSpec
    occupant: tuple[str, str] | None = None  # (chain id, unit name)
    occupant_kind: str | None = None
    partial_bitstream_bytes: dict[str, int] = field(default_factory=dict)

    @property
    def prr_id(self) -> int:
        return self.spec.prr_id

    def fits(self, cells: int, dsp: int) -> bool:
        return cells <= self.spec.size_logic_cells and dsp <= self.spec.size_dsp_slices


class ResourceBudget:
    """Static-region allocation ledger.  allocated + free == totals, always."""

    def __init__(self, platform: PlatformModel) -> None:
        self.platform = platform
        self.total_cells = platform.static_logic_cells
        self.total_dsp = platform.static_dsp_slices
        self._alloc: dict[str, tuple[int, int]] = {}
        self._lock = threading.Lock()
        self.prrs = {p.prr_id: PrrPartition(p) for p in platform.prrs}

    @property
    def allocated(self) -> tuple[int, int]:
        with self._lock:
            return (sum(c for c, _ in self._alloc.values()), sum(d for _, d in self._alloc.values()))

    @property
    def free(self) -> tuple[int, int]:
        cells, dsp = self.allocated
        return self.total_cells - cells, self.total_dsp - dsp

    def owners(self) -> dict[str, tuple[int, int]]:
        with self._lock:
            return dict(self._alloc)

    def allocate(self, owner: str, cells: int, dsp: int) -> None:
        with self._lock:
            if owner in self._alloc:
                raise ValueError(f"{owner} already holds an allocation")
            used_c = sum(c for c, _ in self._alloc.values())
            used_d = sum(d for _, d in self._alloc.values())
            if used_c + cells > self.total_cells or used_d + dsp > self.total_dsp:
                raise AdmissionFailed(f"allocation for {owner} exceeds the static region")
            self._alloc[owner] = (cells, dsp)

    def release(self, owner: str) -> tuple[int, int]:
        with self._lock:
            return self._alloc.pop(owner, (0, 0))

    def prr(self, prr_id: int) -> PrrPartition:
        try:
            return self.prrs[int(prr_id)]
        except (KeyError, ValueError):
            raise UnknownPrr(f"no PRR {prr_id!r}") from None

    def snapshot(self) -> dict:
        cells, dsp = self.allocated
        return {
            "logic_cells": {"total": self.total_cells, "allocated": cells, "free": self.total_cells - cells},
            "dsp_slices": {"total": self.total_dsp, "allocated": dsp, "free": self.total_dsp - dsp},
            "prrs": {
                str(pid): {
                    "size_logic_cells": p.spec.size_logic_cells,
                    "size_dsp_slices": p.spec.size_dsp_slices,
                    "occupant": list(p.occupant) if p.occupant else None,
                    "occupant_kind": p.occupant_kind,
                }
                for pid, p in sorted(self.prrs.items())
            },
        }
