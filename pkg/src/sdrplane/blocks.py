"""Built-in processing-unit kinds.

Resource costs, latencies, throughputs and partial-bitstream sizes below are
model constants for a Zynq-7045-class fabric at 300 MHz, not synthesis
results.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from . import dsp
from .errors import InvalidRate, ParamOutOfRange
from .unit import Catalog, RegisterSpec, UnitDescriptor

FABRIC_HZ = 300e6
BITSTREAM_BYTES_PER_CELL = 40  # modeled partial-bitstream density

RATE_CODES = {0: Fraction(1, 2), 1: Fraction(2, 3), 2: Fraction(3, 4)}
FIR_MAX_TAPS = 32
FIR_TAP_BASE = 0x10
Q16 = 1 << 16


def rate_code(rate) -> int:
    r = dsp.parse_rate(rate)
    return next(k for k, v in RATE_CODES.items() if v == r)


def to_q16(x: float) -> int:
    """Signed Q16.16 as a 32-bit register value."""
    v = int(round(x * Q16))
    if not -(1 << 31) <= v < (1 << 31):
        raise ValueError(f"tap {x} does not fit Q16.16")
    return v & 0xFFFFFFFF


def from_q16(v: int) -> float:
    if v & 0x80000000:
        v -= 1 << 32
    return v / Q16


def _check_fft_len(v: int) -> None:
    dsp.check_fft_length(v)


def _check_order(v: int) -> None:
    if v not in dsp.QAM_ORDERS:
        raise ParamOutOfRange(f"QAM order {v} not in {dsp.QAM_ORDERS}")


def _check_rate(v: int) -> None:
    if v not in RATE_CODES:
        raise InvalidRate(f"rate code {v} not in {sorted(RATE_CODES)} (1/2, 2/3, 3/4)")


def _desc(kind, *, ins="sample", outs="sample", n_in=1, n_out=1, per_step=(64, 64),
          throughput=FABRIC_HZ, latency=16, cells, dsp_slices, regs=(), description=""):
    return UnitDescriptor(
        kind=kind, n_inputs=n_in, n_outputs=n_out,
        samples_in_per_step=per_step[0], samples_out_per_step=per_step[1],
        throughput_sps=throughput, latency_cycles=latency,
        cost_logic_cells=cells, cost_dsp_slices=dsp_slices,
        register_map=tuple(regs), input_type=ins, output_type=outs,
        partial_bitstream_bytes=cells * BITSTREAM_BYTES_PER_CELL,
        description=description,
    )


# -- behaviors -----------------------------------------------------------------

def _passthrough(params, state, inputs):
    return [inputs[0]]  # popped windows are already private copies


def _scale(params, state, inputs):
    return [inputs[0] * from_q16(params["gain_q16"])]


def _fir_taps(params) -> np.ndarray:
    n = params["ntaps"]
    return np.array([from_q16(params[f"tap{k}"]) for k in range(n)])


def _fir_state(params):
    return {"fir": dsp.FirFilter(_fir_taps(params))}


def _fir(params, state, inputs):
    return [state["fir"](inputs[0])]


def _fft(params, state, inputs):
    return [dsp.fft(inputs[0])]


def _ifft(params, state, inputs):
    return [dsp.ifft(inputs[0])]


def _qam_map(params, state, inputs):
    return [dsp.qam_map(inputs[0], params["order"])]


def _qam_demap(params, state, inputs):
    return [dsp.qam_demap(inputs[0], params["order"])]


def _code_args(params):
    return RATE_CODES[params["rate"]], params["coded_multiple"]


def _coded_len(params) -> int:
    rate, mult = _code_args(params)
    return dsp.coded_length(8 * params["block_bytes"], rate, mult)


def _conv_encode(params, state, inputs):
    rate, mult = _code_args(params)
    return [dsp.conv_encode(dsp.bytes_to_bits(inputs[0].tobytes()), rate, mult)]


def _viterbi(params, state, inputs):
    rate, mult = _code_args(params)
    bits = dsp.viterbi_decode(inputs[0], rate, 8 * params["block_bytes"], mult)
    return [np.packbits(bits)]


def _crc_config(params) -> dsp.CrcConfig:
    return dsp.CrcConfig(params["poly"], params["init"], params["xorout"], bool(params["reflect"]))


def _crc_append(params, state, inputs):
    out = dsp.crc_append(inputs[0].tobytes(), _crc_config(params))
    return [np.frombuffer(out, dtype=np.uint8)]


def _crc_check(params, state, inputs):
    frame = inputs[0].tobytes()
    ok = dsp.crc_check(frame, _crc_config(params))
    state["checked"] = state.get("checked", 0) + 1
    state["failed"] = state.get("failed", 0) + (not ok)
    return [np.frombuffer(frame[:-4] + bytes([ok]), dtype=np.uint8)]


# -- register maps ---------------------------------------------------------------

def _block_reg(offset=0x04, default=64, maximum=65536):
    return RegisterSpec(offset, "block", 1, maximum, default)


_CRC_REGS = (
    RegisterSpec(0x00, "block_bytes", 1, 4096, 100),
    RegisterSpec(0x04, "poly", 1, 0xFFFFFFFF, dsp.CRC32.poly),
    RegisterSpec(0x08, "init", 0, 0xFFFFFFFF, dsp.CRC32.init),
    RegisterSpec(0x0C, "xorout", 0, 0xFFFFFFFF, dsp.CRC32.xorout),
    RegisterSpec(0x10, "reflect", 0, 1, 1),
)

_CODE_REGS = (
    RegisterSpec(0x00, "block_bytes", 1, 4096, 100),
    RegisterSpec(0x04, "rate", 0, 2, 0, check=_check_rate),
    RegisterSpec(0x08, "coded_multiple", 1, 65536, 1),
)

_FIR_REGS = (
    RegisterSpec(0x00, "ntaps", 1, FIR_MAX_TAPS, 1),
    _block_reg(),
) + tuple(
    RegisterSpec(FIR_TAP_BASE + 4 * k, f"tap{k}", 0, 0xFFFFFFFF, Q16 if k == 0 else 0)
    for k in range(FIR_MAX_TAPS)
)


def _fft_reg():
    return RegisterSpec(0x00, "length", 16, 2048, 64, check=_check_fft_len)


def _qam_regs():
    return (RegisterSpec(0x00, "order", 2, 64, 4, check=_check_order), _block_reg(default=48))


def register_builtin_kinds(catalog: Catalog) -> Catalog:
    reg = catalog.register_kind

    reg(_desc("passthrough", per_step=(64, 64), latency=2, cells=200, dsp_slices=0,
              regs=[_block_reg(offset=0x00)], description="sample pass-through"),
        _passthrough, io_counts=lambda p: (p["block"], p["block"]))

    reg(_desc("scale", latency=3, cells=250, dsp_slices=2,
              regs=[RegisterSpec(0x00, "gain_q16", 0, 0xFFFFFFFF, Q16), _block_reg()],
              description="complex gain, Q16.16"),
        _scale, io_counts=lambda p: (p["block"], p["block"]))

    reg(_desc("fir", latency=40, cells=2500, dsp_slices=32, regs=_FIR_REGS,
              description="real-tap FIR filter, taps in Q16.16 registers"),
        _fir, io_counts=lambda p: (p["block"], p["block"]), init_state=_fir_state)

    reg(_desc("fft", latency=1100, cells=4000, dsp_slices=24, regs=[_fft_reg()],
              description="radix-2 FFT"),
        _fft, io_counts=lambda p: (p["length"], p["length"]))

    reg(_desc("ifft", latency=1100, cells=4000, dsp_slices=24, regs=[_fft_reg()],
              description="radix-2 inverse FFT, 1/N scaled"),
        _ifft, io_counts=lambda p: (p["length"], p["length"]))

    def qam_io(p):
        k = dsp.bits_per_symbol(p["order"])
        return p["block"] * k, p["block"]

    reg(_desc("qam_map", ins="bit", per_step=(96, 48), latency=4, cells=600, dsp_slices=0,
              regs=_qam_regs(), description="Gray-coded QAM mapper"),
        _qam_map, io_counts=qam_io)

    reg(_desc("qam_demap", outs="bit", per_step=(48, 96), latency=6, cells=900, dsp_slices=4,
              regs=_qam_regs(), description="hard-decision QAM demapper"),
        _qam_demap, io_counts=lambda p: qam_io(p)[::-1])

    reg(_desc("conv_encode", ins="byte", outs="bit", per_step=(100, 1612), latency=8,
              cells=300, dsp_slices=0, regs=_CODE_REGS,
              description="K=7 133/171 convolutional encoder with puncturing"),
        _conv_encode, io_counts=lambda p: (p["block_bytes"], _coded_len(p)))

    reg(_desc("viterbi", ins="bit", outs="byte", per_step=(1612, 100), latency=300,
              cells=6000, dsp_slices=0, regs=_CODE_REGS,
              description="hard-decision Viterbi decoder"),
        _viterbi, io_counts=lambda p: (_coded_len(p), p["block_bytes"]))

    reg(_desc("crc_append", ins="byte", outs="byte", per_step=(100, 104), latency=4,
              cells=400, dsp_slices=0, regs=_CRC_REGS, description="append 32-bit CRC"),
        _crc_append, io_counts=lambda p: (p["block_bytes"], p["block_bytes"] + 4))

    reg(_desc("crc_check", ins="byte", outs="byte", per_step=(104, 101), latency=4,
              cells=400, dsp_slices=0, regs=_CRC_REGS,
              description="verify and strip 32-bit CRC; appends a status byte (1 ok)"),
        _crc_check, io_counts=lambda p: (p["block_bytes"] + 4, p["block_bytes"] + 1))
    return catalog


def default_catalog() -> Catalog:
    """Built-in fabric kinds plus the RF loopback channel."""
    from .rf import register_rf_kinds

    return register_rf_kinds(register_builtin_kinds(Catalog()))
