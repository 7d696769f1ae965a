"""``sdrplane`` command line: a thin client of the control protocol.

Exit status: 0 ok, 1 usage, 2 cannot reach the control service, 3 the
service rejected the request.
"""

from __future__ import annotations

import argparse
import json
import signal
import sys
import threading
import time
from pathlib import Path

from .chain.platform import PlatformModel, PrrSpec
from .control import ControlClient, ControlService, LocalClient, RemoteError, format_rate, serve
from .errors import ConnectionRefused, EndpointBusy, SdrError

DEFAULT_CONTROL = "127.0.0.1:7878"
EXIT_USAGE, EXIT_CONNECTION, EXIT_REJECTED = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _kv(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key, value


def _scalar(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _prr(text: str) -> PrrSpec:
    try:
        pid, cells, dsp = (int(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"PRR is id:cells:dsp, got {text!r}") from None
    return PrrSpec(pid, cells, dsp)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sdrplane", description="Control a modeled SDR radio data plane.")
    p.add_argument("--control", default=DEFAULT_CONTROL, metavar="HOST:PORT",
                   help=f"control endpoint (default {DEFAULT_CONTROL})")
    p.add_argument("--local", action="store_true", help="run the verb against an in-process data plane")
    p.add_argument("--json", action="store_true", help="print raw JSON results")
    # the global flags are accepted after the verb too
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--control", default=argparse.SUPPRESS, metavar="HOST:PORT", help="control endpoint")
    common.add_argument("--local", action="store_true", default=argparse.SUPPRESS, help="in-process data plane")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="print raw JSON results")
    sub = p.add_subparsers(dest="verb", metavar="VERB", parser_class=_Parser)
    sub.required = True
    _add = sub.add_parser
    sub.add_parser = lambda *a, **k: _add(*a, parents=[common], **k)

    sub.add_parser("catalog", help="list unit kinds")
    s = sub.add_parser("deploy", help="admit and deploy a chain-spec file")
    s.add_argument("spec", type=Path)
    s.add_argument("--no-start", action="store_true", help="deploy without starting the pump")
    s = sub.add_parser("teardown", help="drain and remove a chain")
    s.add_argument("chain")
    sub.add_parser("list", help="deployed chains")
    s = sub.add_parser("set-param", help="write a unit register on a live chain")
    s.add_argument("chain")
    s.add_argument("unit")
    s.add_argument("register")
    s.add_argument("value")
    s = sub.add_parser("get-param", help="read a unit register")
    s.add_argument("chain")
    s.add_argument("unit")
    s.add_argument("register")
    s = sub.add_parser("rf-set", help="set an RF parameter")
    s.add_argument("name")
    s.add_argument("value", type=float)
    s = sub.add_parser("rf-get", help="read RF parameters")
    s.add_argument("name", nargs="?")
    sub.add_parser("stats", help="crossbar, ring and chain counters")
    s = sub.add_parser("reconfig-full", help="replace every chain (whole-fabric reprogramming)")
    s.add_argument("specs", nargs="+", type=Path)
    s.add_argument("--bytes", type=int, required=True, help="total bitstream size")
    s = sub.add_parser("reconfig-prr", help="swap the occupant of one PRR")
    s.add_argument("prr", type=int)
    s.add_argument("--bytes", type=int, required=True, help="partial bitstream size")
    s.add_argument("--kind", help="occupant unit kind")
    s.add_argument("--param", type=_kv, action="append", default=[], metavar="K=V")
    s.add_argument("--occupant", help="occupant as JSON (object or list of objects)")
    s = sub.add_parser("fronthaul-rate", help="I/Q fronthaul bit rate")
    s.add_argument("--antennas", type=int, required=True)
    s.add_argument("--rate", type=float, required=True, help="sample rate, samples/s")
    s.add_argument("--bits", type=int, required=True, help="bits per I or Q component")
    s = sub.add_parser("subscribe", help="stream events")
    s.add_argument("--count", type=int, default=0, help="stop after this many events (0: forever)")
    s.add_argument("--timeout", type=float, default=None)
    s = sub.add_parser("call", help="send any verb with raw arguments")
    s.add_argument("name")
    s.add_argument("--arg", type=_kv, action="append", default=[], metavar="K=V")

    s = sub.add_parser("serve", help="run a node: data plane plus control service")
    s.add_argument("--device", type=int, default=0)
    s.add_argument("--listen", metavar="HOST:PORT", help="accept cluster links here")
    s.add_argument("--peer", action="append", default=[], metavar="HOST:PORT", help="connect a cluster link")
    s.add_argument("--peer-control", type=_kv, action="append", default=[], metavar="DEV=HOST:PORT",
                   help="control endpoint of a peer node, for remote units")
    s.add_argument("--prr", type=_prr, action="append", default=[], metavar="ID:CELLS:DSP")
    s.add_argument("--impose-downtime", action="store_true",
                   help="halt the data path for modeled reconfiguration time")
    s = sub.add_parser("bench", help="pass-through chain throughput")
    s.add_argument("--units", type=int, default=4)
    s.add_argument("--samples", type=int, default=1 << 23)
    s.add_argument("--block", type=int, default=16384)
    return p


# -- rendering ------------------------------------------------------------------------------

def flatten(obj, prefix: str = "") -> list[str]:
    """Stable ``path value`` lines for diffable stats output."""
    lines = []
    if isinstance(obj, dict):
        for k in sorted(obj, key=str):
            lines += flatten(obj[k], f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, list) and obj and all(isinstance(x, dict) for x in obj):
        for i, x in enumerate(obj):
            lines += flatten(x, f"{prefix}[{i}]")
    else:
        lines.append(f"{prefix} {json.dumps(obj)}")
    return lines


def sci(x: float) -> str:
    """Compact scientific notation: 7.3728e9."""
    mant, exp = f"{x:.10e}".split("e")
    return f"{mant.rstrip('0').rstrip('.')}e{int(exp)}"


def render(verb: str, result) -> str:
    if verb == "fronthaul-rate":
        return f"{result['text']} ({sci(result['bps'])} b/s)\n"
    if verb == "deploy":
        return result["rendered"] + f"chain id: {result['chain']}\n"
    if verb == "list":
        if not result["chains"]:
            return "no chains\n"
        return "".join(f"{c['id']}\t{c['name']}\t{c['state']}\tunits={','.join(c['units'])}\n"
                       for c in result["chains"])
    if verb == "catalog":
        return "".join(f"{k['kind']}\t{k['input_type']}->{k['output_type']}\t"
                       f"{k['cost_logic_cells']} cells\t{k['cost_dsp_slices']} DSP\t"
                       f"{k['throughput_sps'] / 1e6:g} Msps\t{k['description']}\n" for k in result["kinds"])
    return "\n".join(flatten(result)) + "\n"


def _service(args) -> ControlService:
    from .chain.manager import ChainManager
    from .crossbar import Crossbar

    platform = PlatformModel(prrs=tuple(getattr(args, "prr", []) or ()))
    return ControlService(ChainManager(crossbar=Crossbar(getattr(args, "device", 0)), platform=platform,
                                       impose_downtime=getattr(args, "impose_downtime", False)))


def _request(args) -> tuple[str, dict]:
    v = args.verb
    if v == "deploy":
        return v, {"spec": args.spec.read_text(), "start": not args.no_start}
    if v == "teardown":
        return v, {"chain": args.chain}
    if v == "set-param":
        return v, {"chain": args.chain, "unit": args.unit, "register": args.register, "value": _scalar(args.value)}
    if v == "get-param":
        return v, {"chain": args.chain, "unit": args.unit, "register": args.register}
    if v == "rf-set":
        return v, {"name": args.name, "value": args.value}
    if v == "rf-get":
        return v, ({"name": args.name} if args.name else {})
    if v == "reconfig-full":
        return v, {"specs": [p.read_text() for p in args.specs], "bytes": args.bytes}
    if v == "reconfig-prr":
        if args.occupant:
            occupant = json.loads(args.occupant)
        elif args.kind:
            occupant = {"kind": args.kind, "params": {k: _scalar(x) for k, x in args.param}}
        else:
            raise SystemExit("sdrplane: error: reconfig-prr needs --kind or --occupant")
        return v, {"prr": args.prr, "occupant": occupant, "bytes": args.bytes}
    if v == "fronthaul-rate":
        return v, {"antennas": args.antennas, "rate": args.rate, "bits": args.bits}
    if v == "call":
        return args.name, {k: _scalar(x) for k, x in args.arg}
    return v, {}


def _run_serve(args) -> int:
    from .cluster import connect, listen

    service = _service(args)
    mgr = service.manager
    try:
        server = serve(args.control, service)
    except EndpointBusy as exc:
        print(f"sdrplane: {exc}", file=sys.stderr)
        return EXIT_CONNECTION
    listener = None
    if args.listen:
        listener = listen(args.listen, mgr.crossbar)
        listener.serve_forever()
    try:
        for addr in args.peer:
            service.node_links.append(_retry(lambda: connect(addr, mgr.crossbar)))
        for dev, addr in args.peer_control:
            mgr.add_peer(int(dev), _retry(lambda: ControlClient(addr)))
    except ConnectionRefused as exc:
        print(f"sdrplane: {exc}", file=sys.stderr)
        return EXIT_CONNECTION
    if listener is not None:
        service.node_links = listener.links + service.node_links  # accepted links appear in stats
    mgr.start()
    host, port = server.address
    cluster = "%s:%d" % listener.address if listener else "-"
    print(f"ready device={args.device} control={host}:{port} cluster={cluster}", flush=True)

    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    while not stop.is_set():
        stop.wait(0.5)
        if listener is not None:
            known = {id(l) for l in service.node_links}
            service.node_links += [l for l in listener.links if id(l) not in known]
    mgr.close()
    server.stop()
    if listener is not None:
        listener.close()
    return 0


def _retry(fn, attempts: int = 50, delay: float = 0.1):
    for i in range(attempts):
        try:
            return fn()
        except ConnectionRefused:
            if i == attempts - 1:
                raise
            time.sleep(delay)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "serve":
        return _run_serve(args)
    if args.verb == "bench":
        from .bench import run_bench
        res = run_bench(args.units, args.samples, args.block)
        print(json.dumps(res) if args.json else f"{res['units']}-unit pass-through: {res['msps']:.1f} Msps "
              f"({res['samples']} samples in {res['seconds']:.3f} s)")
        return 0
    if args.verb == "fronthaul-rate" and not args.local:
        # pure arithmetic; no service needed
        from .chain.admission import fronthaul_rate
        try:
            bps = fronthaul_rate(args.antennas, args.rate, args.bits)
        except ValueError as exc:
            print(f"sdrplane: error: {exc}", file=sys.stderr)
            return EXIT_REJECTED
        result = {"bps": bps, "text": format_rate(bps)}
        print(json.dumps(result) if args.json else render("fronthaul-rate", result).rstrip("\n"))
        return 0
    try:
        verb, req = _request(args)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"sdrplane: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        client = LocalClient(_service(args)) if args.local else ControlClient(args.control)
    except ConnectionRefused as exc:
        print(f"sdrplane: {exc}", file=sys.stderr)
        return EXIT_CONNECTION
    try:
        if args.verb == "subscribe":
            client.call("subscribe")
            n = 0
            while not args.count or n < args.count:
                try:
                    ev = client.next_event(args.timeout)
                except (OSError, ValueError):
                    break
                print(json.dumps(ev), flush=True)
                n += 1
            return 0
        result = client.call(verb, **req)
    except RemoteError as exc:
        print(f"sdrplane: {exc.code}: {exc}", file=sys.stderr)
        if exc.detail.get("rendered"):
            print(exc.detail["rendered"], end="", file=sys.stderr)
        return EXIT_REJECTED
    except (ConnectionRefused, OSError) as exc:
        print(f"sdrplane: connection error: {exc}", file=sys.stderr)
        return EXIT_CONNECTION
    except SdrError as exc:
        print(f"sdrplane: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    finally:
        client.close()
    print(json.dumps(result, indent=1, sort_keys=True) if args.json else render(verb, result).rstrip("\n"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
