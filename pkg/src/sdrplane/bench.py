"""Throughput of an N-unit pass-through chain on this machine (reported, not gated)."""

from __future__ import annotations

import time

import numpy as np

from .chain.manager import ChainManager


def passthrough_spec(units: int, block: int, capacity: int) -> dict:
    names = [f"p{i}" for i in range(units)]
    return {
        "chain": {"name": f"pass{units}", "sample_rate_sps": 80e6},
        "unit": [{"name": n, "kind": "passthrough", "params": {"block": block}} for n in names],
        "link": [{"src": a, "dst": b, "capacity": capacity} for a, b in zip(names, names[1:])],
    }


def run_bench(units: int = 4, samples: int = 1 << 23, block: int = 16384) -> dict:
    mgr = ChainManager()
    chain_id, _ = mgr.deploy(passthrough_spec(units, block, 4 * block))
    rt = mgr.chains[chain_id].runtime
    (src,), (dst,) = rt.inputs.values(), rt.outputs.values()
    chunk = np.exp(1j * np.linspace(0, 2 * np.pi, src.capacity // block * block, endpoint=False))
    n_chunks = max(1, samples // chunk.size)
    total = n_chunks * chunk.size
    got = 0
    sent = 0
    t0 = time.perf_counter()
    while got < total:
        if sent < n_chunks and src.room >= chunk.size:
            src.try_push(chunk, owned=True)  # read-only source; pass-through never writes it
            sent += 1
        mgr.pump_once()
        while (w := dst.try_pop(block)) is not None:
            got += w.size
    seconds = time.perf_counter() - t0
    mgr.close()
    return {"units": units, "samples": total, "seconds": seconds, "msps": total / seconds / 1e6, "block": block}
