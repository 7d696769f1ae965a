"""Crossbar-to-crossbar links between nodes over a reliable byte stream.

Each CHDR packet travels as a VRT frame behind a 4-byte big-endian length.
Connections open with a hello in both directions: 8 magic bytes, a version
byte and the sender's device id, followed by one verdict byte each way.  A link registers itself in the local
crossbar as the route for every endpoint of the peer device.
"""

from __future__ import annotations

import socket
import struct
import threading

from .chdr import ChdrPacket, decapsulate_vrt, encapsulate_vrt, pack_chdr, pack_sid, unpack_chdr
from .crossbar import Crossbar
from .errors import ConnectionRefused, DuplicateDevice, FramingError, HandshakeError, LinkDown

MAGIC = b"SDRPLANE"
VERSION = 1
HELLO = struct.Struct(">8sBB")
_LEN = struct.Struct(">I")
_VERDICT_DUPLICATE = 2  # verdict byte: 0 accepted, 1 bad handshake
MAX_FRAME = 1 << 20


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = str(text).rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


class FrameReader:
    """Reassembles length-prefixed frames from arbitrary stream chunks."""

    def __init__(self, max_frame: int = MAX_FRAME) -> None:
        self._buf = bytearray()
        self.max_frame = max_frame

    def feed(self, chunk: bytes) -> list[bytes]:
        self._buf += chunk
        frames = []
        while len(self._buf) >= _LEN.size:
            (n,) = _LEN.unpack_from(self._buf)
            if n > self.max_frame:
                raise FramingError(f"frame length {n} exceeds {self.max_frame}")
            if len(self._buf) < _LEN.size + n:
                break
            frames.append(bytes(self._buf[_LEN.size:_LEN.size + n]))
            del self._buf[:_LEN.size + n]
        return frames

    @property
    def buffered(self) -> int:
        return len(self._buf)


def frame_packet(packet: ChdrPacket, count: int, mtu: int) -> bytes:
    vrt = encapsulate_vrt(pack_chdr(packet, mtu), pack_sid(packet.sid), count)
    return _LEN.pack(len(vrt)) + vrt


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except OSError as exc:
            raise HandshakeError(f"handshake failed: {exc}") from None
        if not chunk:
            raise HandshakeError("connection closed during handshake")
        buf += chunk
    return buf


def _handshake(sock: socket.socket, crossbar: Crossbar, timeout: float) -> int:
    """Exchange hellos, then one verdict byte each way so both ends learn a refusal."""
    sock.settimeout(timeout)
    try:
        sock.sendall(HELLO.pack(MAGIC, VERSION, crossbar.local_device))
    except OSError as exc:
        raise HandshakeError(f"handshake failed: {exc}") from None
    magic, version, peer = HELLO.unpack(_recv_exact(sock, HELLO.size))
    problem = None
    if magic != MAGIC:
        problem = HandshakeError(f"bad magic {magic!r}")
    elif version != VERSION:
        problem = HandshakeError(f"peer speaks version {version}, we speak {VERSION}")
    elif peer == crossbar.local_device or crossbar.has_route((peer, None)):
        problem = DuplicateDevice(f"peer claims device {peer}, already routed here")
    verdict = _VERDICT_DUPLICATE if isinstance(problem, DuplicateDevice) else int(problem is not None)
    try:
        sock.sendall(bytes([verdict]))
    except OSError:
        pass
    if problem is not None:
        raise problem
    theirs = _recv_exact(sock, 1)[0]
    if theirs == _VERDICT_DUPLICATE:
        raise DuplicateDevice(f"device {peer} already knows a device {crossbar.local_device}")
    if theirs:
        raise HandshakeError(f"device {peer} refused the handshake")
    sock.settimeout(None)
    return peer


class NodeLink:
    """One end of a node-to-node link; a route target for the peer device."""

    def __init__(self, sock: socket.socket, crossbar: Crossbar, peer_device: int) -> None:
        self.sock = sock
        self.crossbar = crossbar
        self.local_device = crossbar.local_device
        self.peer_device = peer_device
        self.name = f"node{peer_device}"
        self.tx_frames = 0
        self.rx_frames = 0
        self.rx_errors = 0
        self.up = True
        self._wlock = threading.Lock()
        self._reader = threading.Thread(target=self._read_loop, name=f"link-{peer_device}", daemon=True)
        crossbar.add_route((peer_device, None), self)
        self._reader.start()
        crossbar.events.publish("link-up", local=self.local_device, peer=peer_device)

    def forward(self, packet: ChdrPacket) -> None:
        if not self.up:
            raise LinkDown(f"link to device {self.peer_device} is down", packet)
        with self._wlock:
            data = frame_packet(packet, self.tx_frames, self.crossbar.mtu)
            try:
                self.sock.sendall(data)
            except OSError as exc:
                self._down(f"send failed: {exc}")
                raise LinkDown(f"link to device {self.peer_device} is down", packet) from None
            self.tx_frames += 1

    def deliver(self, packet: ChdrPacket, timeout: float | None = None) -> None:
        self.forward(packet)

    def _read_loop(self) -> None:
        reader = FrameReader()
        reason = "peer closed"
        try:
            while True:
                chunk = self.sock.recv(65536)
                if not chunk:
                    break
                for frame in reader.feed(chunk):
                    try:
                        pkt = unpack_chdr(decapsulate_vrt(frame))
                    except FramingError:
                        self.rx_errors += 1
                        continue
                    self.rx_frames += 1
                    self.crossbar.route(pkt)
        except (OSError, FramingError) as exc:
            reason = f"{type(exc).__name__}: {exc}"
        self._down(reason)

    def _down(self, reason: str) -> None:
        if not self.up:
            return
        self.up = False
        self.crossbar.remove_route((self.peer_device, None))
        self.crossbar.events.publish("link-down", peer=self.peer_device, reason=reason)
        try:
            self.sock.close()
        except OSError:
            pass

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._down("closed locally")
        if self._reader is not threading.current_thread():
            self._reader.join(timeout=2)

    def stats(self) -> dict:
        return {"peer": self.peer_device, "up": self.up, "tx_frames": self.tx_frames,
                "rx_frames": self.rx_frames, "rx_errors": self.rx_errors}


def connect(address, crossbar: Crossbar, timeout: float = 5.0) -> NodeLink:
    host, port = parse_address(address) if isinstance(address, str) else address
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except (ConnectionRefusedError, socket.timeout, OSError) as exc:
        raise ConnectionRefused(f"cannot reach {host}:{port}: {exc}") from None
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    try:
        peer = _handshake(sock, crossbar, timeout)
    except Exception:
        sock.close()
        raise
    return NodeLink(sock, crossbar, peer)


class NodeListener:
    """Accepts node links on a listening socket."""

    def __init__(self, address, crossbar: Crossbar, timeout: float = 5.0) -> None:
        host, port = parse_address(address) if isinstance(address, str) else address
        self.crossbar = crossbar
        self.timeout = timeout
        self.sock = socket.create_server((host, port))
        self.links: list[NodeLink] = []
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()[:2]

    def accept(self) -> NodeLink:
        conn, _ = self.sock.accept()
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            peer = _handshake(conn, self.crossbar, self.timeout)
        except Exception:
            conn.close()
            raise
        link = NodeLink(conn, self.crossbar, peer)
        self.links.append(link)
        return link

    def serve_forever(self) -> None:
        """Accept in the background; rejected handshakes are published as events."""
        def loop():
            while True:
                try:
                    self.accept()
                except (DuplicateDevice, HandshakeError) as exc:
                    self.crossbar.events.publish("link-rejected", error=str(exc))
                except OSError:
                    return
        self._thread = threading.Thread(target=loop, name="node-accept", daemon=True)
        self._thread.start()

    def close(self) -> None:
        self.sock.close()
        for link in self.links:
            link.close()


def listen(address, crossbar: Crossbar, timeout: float = 5.0) -> NodeListener:
    return NodeListener(address, crossbar, timeout)
