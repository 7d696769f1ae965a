"""Mocked RF plane: analog control registers and a loopback channel.

Ranges and step sizes follow an AD9361-class transceiver and are model
constants, not device limits read from hardware.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from .errors import OutOfRange, UnknownParam
from .unit import Catalog, RegisterSpec, UnitDescriptor


@dataclass(frozen=True)
class RfField:
    name: str
    lo: float
    hi: float
    step: float
    default: float
    unit: str


RF_FIELDS = {
    f.name: f
    for f in (
        RfField("lo_freq_hz", 7.0e7, 6.0e9, 1.0, 2.4e9, "Hz"),
        RfField("filter_bw_hz", 2.0e5, 5.6e7, 1.0, 2.0e7, "Hz"),
        RfField("pa_gain_db", 0.0, 89.75, 0.25, 0.0, "dB"),
        RfField("lna_gain_db", 0.0, 76.0, 1.0, 0.0, "dB"),
    )
}


def snap(field: RfField, value: float) -> float:
    """Nearest grid point (ties away from zero), computed in decimal to dodge binary noise."""
    steps = (Decimal(repr(float(value))) - Decimal(repr(field.lo))) / Decimal(repr(field.step))
    n = int(steps.to_integral_value(rounding="ROUND_HALF_UP"))
    return float(Decimal(repr(field.lo)) + n * Decimal(repr(field.step)))


class RfConfig:
    """The RF control registers.  Fields are independent of each other."""

    def __init__(self) -> None:
        self._values = {n: f.default for n, f in RF_FIELDS.items()}
        self._lock = threading.Lock()

    def _field(self, name: str) -> RfField:
        try:
            return RF_FIELDS[name]
        except KeyError:
            raise UnknownParam(f"no RF parameter {name!r}; known: {', '.join(RF_FIELDS)}") from None

    def set(self, name: str, value) -> dict:
        f = self._field(name)
        try:
            v = float(value)
        except (TypeError, ValueError):
            raise OutOfRange(f"{name} needs a number, got {value!r}") from None
        if not math.isfinite(v) or not f.lo <= v <= f.hi:
            raise OutOfRange(f"{name}={value} outside [{f.lo:g}, {f.hi:g}] {f.unit}")
        snapped = snap(f, v)
        with self._lock:
            self._values[name] = snapped
        return {"name": name, "requested": v, "value": snapped, "snapped": snapped != v, "unit": f.unit}

    def get(self, name: str) -> float:
        self._field(name)
        with self._lock:
            return self._values[name]

    def snapshot(self) -> dict[str, float]:
        with self._lock:
            return dict(self._values)


# the plain functions mirror the operation names
def set_rf_param(config: RfConfig, name: str, value) -> dict:
    return config.set(name, value)


def get_rf_param(config: RfConfig, name: str) -> float:
    return config.get(name)


# -- channel ------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelModel:
    mode: str = "identity"  # or "awgn"
    snr_db: float = 30.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("identity", "awgn"):
            raise ValueError(f"channel mode must be identity or awgn, got {self.mode!r}")
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")


def box_muller(rng: np.random.Generator, n: int) -> np.ndarray:
    """n complex normals with E|z|^2 = 1 from pairs of uniforms."""
    u1 = 1.0 - rng.random(n)  # (0, 1]
    u2 = rng.random(n)
    r = np.sqrt(-np.log(u1))  # sqrt(-2 ln u1) / sqrt(2)
    return r * np.exp(2j * np.pi * u2)


class Channel:
    """Stateful channel for streaming use; the noise sequence is reproducible per seed."""

    def __init__(self, model: ChannelModel) -> None:
        self.model = model
        self.rng = np.random.default_rng(model.seed)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.complex128)
        if self.model.mode == "identity" or x.size == 0:
            return x.copy()
        power = float(np.mean(np.abs(x) ** 2))
        noise_power = power / 10 ** (self.model.snr_db / 10)
        return x + math.sqrt(noise_power) * box_muller(self.rng, x.size)


def loopback(tx, channel: ChannelModel | None = None) -> np.ndarray:
    return Channel(channel or ChannelModel())(tx)


# -- channel as a processing unit ---------------------------------------------------------

def _channel_state(params):
    mode = "awgn" if params["mode"] else "identity"
    return {"channel": Channel(ChannelModel(mode, params["snr_cdb"] / 100, params["seed"]))}


def register_rf_kinds(catalog: Catalog) -> Catalog:
    """The loopback channel as a catalog kind, so it can sit inside a chain."""
    desc = UnitDescriptor(
        kind="channel", n_inputs=1, n_outputs=1, samples_in_per_step=64, samples_out_per_step=64,
        throughput_sps=3.0e8, latency_cycles=1, cost_logic_cells=0, cost_dsp_slices=0,
        register_map=(
            RegisterSpec(0x00, "mode", 0, 1, 0),  # 0 identity, 1 awgn
            RegisterSpec(0x04, "snr_cdb", 0, 10000, 3000),  # SNR in 0.01 dB
            RegisterSpec(0x08, "seed", 0, 0xFFFFFFFF, 0),
            RegisterSpec(0x0C, "block", 1, 65536, 64),
        ),
        description="RF loopback channel model (identity or AWGN); not fabric logic",
    )
    catalog.register_kind(desc, lambda p, s, ins: [s["channel"](ins[0])],
                          io_counts=lambda p: (p["block"], p["block"]), init_state=_channel_state)
    return catalog
