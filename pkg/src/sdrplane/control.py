"""Control protocol: newline-delimited JSON requests and responses over TCP.

Request::   {"id": 7, "verb": "set-param", "args": {"chain": "chain1", ...}}
Response::  {"id": 7, "status": "ok", "result": {...}}
            {"id": 7, "status": "error", "error": {"code": "UnknownChain", "message": "..."}}

After ``subscribe`` the connection also carries event records
(``{"event": "drop", ...}``, no ``id``).  Responses on one connection come
back in request order.
"""

from __future__ import annotations

import itertools
import json
import queue
import socket
import socketserver
import threading
from typing import Any, Callable

from .chain.admission import fronthaul_rate
from .chain.manager import ChainManager
from .errors import AdmissionFailed, ConnectionRefused, ControlError, EndpointBusy, ProtocolError, SdrError
from .rf import RfConfig

PUBLIC_VERBS = (
    "catalog", "deploy", "teardown", "list", "set-param", "get-param", "rf-set", "rf-get",
    "stats", "reconfig-full", "reconfig-prr", "fronthaul-rate", "subscribe",
)
# used between nodes for distributed admission and remote units
INTERNAL_VERBS = ("reserve", "commit", "release", "host-set-param", "host-get-param")
MAX_LINE = 1 << 22


def format_rate(bps: float) -> str:
    return f"{bps / 1e9:.4f} Gbps"


class RemoteError(ControlError):
    def __init__(self, code: str, message: str, detail: dict | None = None) -> None:
        super().__init__(message)
        self._code = code
        self.detail = detail or {}

    @property
    def code(self) -> str:
        return self._code


def _require(args: dict, *names: str) -> list:
    missing = [n for n in names if n not in args]
    if missing:
        raise ProtocolError(f"missing argument(s): {', '.join(missing)}")
    return [args[n] for n in names]


class ControlService:
    """Verb dispatch shared by the TCP server and the CLI's in-process mode."""

    def __init__(self, manager: ChainManager | None = None, rf: RfConfig | None = None) -> None:
        self.manager = manager or ChainManager()
        self.rf = rf or RfConfig()
        self.macs: dict[str, Any] = {}
        self.node_links: list = []
        self._verbs: dict[str, Callable[[dict], Any]] = {
            "catalog": self._catalog,
            "deploy": self._deploy,
            "teardown": self._teardown,
            "list": lambda a: {"chains": self.manager.list()},
            "set-param": self._set_param,
            "get-param": self._get_param,
            "rf-set": lambda a: self.rf.set(*_require(a, "name", "value")),
            "rf-get": self._rf_get,
            "stats": lambda a: self.stats(),
            "reconfig-full": self._reconfig_full,
            "reconfig-prr": self._reconfig_prr,
            "fronthaul-rate": self._fronthaul,
            "reserve": lambda a: self.manager.host_reserve(*_require(a, "kind"), a.get("params")),
            "commit": lambda a: self.manager.host_commit(*_require(a, "token", "src", "dst")),
            "release": lambda a: self.manager.host_release(*_require(a, "token")),
            "host-set-param": lambda a: self.manager.host_set_param(*_require(a, "token", "register", "value")),
            "host-get-param": lambda a: self.manager.host_get_param(*_require(a, "token", "register")),
        }

    @property
    def verbs(self) -> list[str]:
        return sorted(set(self._verbs) | {"subscribe"})

    def call(self, verb: str, args: dict | None = None) -> Any:
        fn = self._verbs.get(verb)
        if fn is None:
            raise ProtocolError(f"unknown verb {verb!r}")
        if args is not None and not isinstance(args, dict):
            raise ProtocolError("args must be an object")
        return fn(dict(args or {}))

    def handle(self, request: dict) -> dict:
        rid = request.get("id")
        try:
            verb = request.get("verb")
            if not isinstance(verb, str):
                raise ProtocolError("request needs a string verb")
            result = self.call(verb, request.get("args"))
            return {"id": rid, "status": "ok", "result": result}
        except Exception as exc:
            return {"id": rid, "status": "error", "error": error_record(exc)}

    # verbs ---------------------------------------------------------------------------------

    def _catalog(self, a):
        return {"kinds": [d.to_dict() for d in self.manager.catalog.descriptors()]}

    def _deploy(self, a):
        (spec,) = _require(a, "spec")
        chain_id, report = self.manager.deploy(spec, start=bool(a.get("start", True)))
        return {"chain": chain_id, "report": report.to_dict(), "rendered": report.render()}

    def _teardown(self, a):
        (chain,) = _require(a, "chain")
        return self.manager.teardown(chain)

    def _set_param(self, a):
        return self.manager.set_param(*_require(a, "chain", "unit", "register", "value"))

    def _get_param(self, a):
        chain, unit, register = _require(a, "chain", "unit", "register")
        return {"chain": chain, "unit": unit, "register": register,
                "value": self.manager.get_param(chain, unit, register)}

    def _rf_get(self, a):
        if "name" in a:
            return {"name": a["name"], "value": self.rf.get(a["name"])}
        return self.rf.snapshot()

    def _reconfig_full(self, a):
        specs, nbytes = _require(a, "specs", "bytes")
        return self.manager.reconfigure_full(specs, int(nbytes))

    def _reconfig_prr(self, a):
        prr, occupant, nbytes = _require(a, "prr", "occupant", "bytes")
        return self.manager.reconfigure_prr(int(prr), occupant, int(nbytes))

    def _fronthaul(self, a):
        antennas, rate, bits = _require(a, "antennas", "rate", "bits")
        bps = fronthaul_rate(antennas, rate, bits)
        return {"bps": bps, "text": format_rate(bps)}

    def stats(self) -> dict:
        out = self.manager.stats()
        out["rf"] = self.rf.snapshot()
        out["mac"] = {name: mac.stats() for name, mac in sorted(self.macs.items())}
        out["node_links"] = [l.stats() for l in self.node_links]
        return out


def error_record(exc: BaseException) -> dict:
    code = exc.code if isinstance(exc, SdrError) else type(exc).__name__
    rec = {"code": code, "message": str(exc)}
    if isinstance(exc, AdmissionFailed) and exc.report is not None:
        rec["report"] = exc.report.to_dict()
        rec["rendered"] = exc.report.render()
    return rec


# -- server -------------------------------------------------------------------------------

class _Handler(socketserver.StreamRequestHandler):
    def setup(self) -> None:
        super().setup()
        self._wlock = threading.Lock()
        self._sub = None

    def _send(self, record: dict) -> None:
        data = (json.dumps(record, default=_json_default) + "\n").encode()
        with self._wlock:
            self.wfile.write(data)
            self.wfile.flush()

    def handle(self) -> None:
        service: ControlService = self.server.service
        try:
            while True:
                line = self.rfile.readline(MAX_LINE)
                if not line:
                    break
                if not line.strip():
                    continue
                try:
                    request = json.loads(line.decode("utf-8"))
                    if not isinstance(request, dict):
                        raise ProtocolError("request must be a JSON object")
                except (UnicodeDecodeError, json.JSONDecodeError, ProtocolError) as exc:
                    self._send({"id": None, "status": "error",
                                "error": {"code": "ProtocolError", "message": f"bad request: {exc}"}})
                    continue
                if request.get("verb") == "subscribe":
                    self._subscribe(service)
                    self._send({"id": request.get("id"), "status": "ok", "result": {"subscribed": True}})
                    continue
                self._send(service.handle(request))
        except (ConnectionError, OSError):
            pass
        finally:
            if self._sub is not None:
                service.manager.events.unsubscribe(self._sub)

    def _subscribe(self, service: ControlService) -> None:
        if self._sub is not None:
            return
        self._sub = service.manager.events.subscribe()
        q = self._sub

        def pump():
            while True:
                rec = q.get()
                try:
                    self._send(rec)
                except (OSError, ValueError):
                    return
        threading.Thread(target=pump, daemon=True, name="control-events").start()


def _json_default(o):
    if hasattr(o, "item"):
        return o.item()
    if isinstance(o, (set, tuple)):
        return list(o)
    return str(o)


class ControlServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, service: ControlService) -> None:
        from .cluster import parse_address
        addr = parse_address(address) if isinstance(address, str) else tuple(address)
        self.service = service
        try:
            super().__init__(addr, _Handler)
        except OSError as exc:
            raise EndpointBusy(f"cannot bind control endpoint {addr[0]}:{addr[1]}: {exc}") from None
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]

    def start(self) -> "ControlServer":
        self._thread = threading.Thread(target=self.serve_forever, name="control", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


def serve(address, service: ControlService | None = None) -> ControlServer:
    return ControlServer(address, service or ControlService()).start()


# -- client -------------------------------------------------------------------------------

class ControlClient:
    def __init__(self, address, timeout: float = 30.0) -> None:
        from .cluster import parse_address
        host, port = parse_address(address) if isinstance(address, str) else address
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ConnectionRefused(f"cannot reach control endpoint {host}:{port}: {exc}") from None
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._rfile = self.sock.makefile("rb")
        self._ids = itertools.count(1)
        self._lock = threading.Lock()
        self.events: queue.Queue[dict] = queue.Queue()

    def request(self, verb: str, **args) -> dict:
        """Send one request and return the raw response record."""
        with self._lock:
            rid = next(self._ids)
            line = json.dumps({"id": rid, "verb": verb, "args": args}, default=_json_default) + "\n"
            self.sock.sendall(line.encode())
            while True:
                raw = self._rfile.readline(MAX_LINE)
                if not raw:
                    raise ConnectionRefused("control connection closed")
                rec = json.loads(raw)
                if "event" in rec and "id" not in rec:
                    self.events.put(rec)
                    continue
                return rec

    def call(self, verb: str, **args):
        rec = self.request(verb, **args)
        if rec.get("status") != "ok":
            err = rec.get("error") or {}
            raise RemoteError(err.get("code", "Error"), err.get("message", ""), err)
        return rec.get("result")

    def next_event(self, timeout: float | None = None) -> dict:
        """Next streamed event after ``subscribe``."""
        try:
            return self.events.get_nowait()
        except queue.Empty:
            pass
        self.sock.settimeout(timeout)
        try:
            while True:
                rec = json.loads(self._rfile.readline(MAX_LINE))
                if "event" in rec:
                    return rec
        finally:
            self.sock.settimeout(None)

    def close(self) -> None:
        try:
            self._rfile.close()
            self.sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class LocalClient:
    """Same surface as ControlClient, calling a ControlService in-process."""

    def __init__(self, service: ControlService) -> None:
        self.service = service

    def request(self, verb: str, **args) -> dict:
        if verb == "subscribe":
            return {"id": None, "status": "ok", "result": {"subscribed": False}}
        return self.service.handle({"id": None, "verb": verb, "args": args})

    def call(self, verb: str, **args):
        rec = self.request(verb, **args)
        if rec["status"] != "ok":
            err = rec["error"]
            raise RemoteError(err["code"], err["message"], err)
        return rec["result"]

    def close(self) -> None:
        pass
