"""Party-to-party transport.

Frames are ``be32 length | u8 tag | 16-byte session id | payload`` where the
length counts everything after the length field.  Frames are routed into one
FIFO per ``(session, sender)`` so concurrent sessions never interleave.
"""

from __future__ import annotations

import logging
import queue
import socket
import struct
import threading
import time
from collections import defaultdict

from .errors import NetworkError, ProtocolAbort

log = logging.getLogger(__name__)

HEADER = struct.Struct(">IB16s")
SESSION_ID_LEN = 16

# message tags
T_HELLO = 0
T_OPEN = 1
T_RESHARE = 2
T_INPUT = 3
T_COMMIT = 4
T_REVEAL = 5
T_TRANSCRIPT = 6
T_PREFLIGHT = 7
T_ABORT = 0xFF

DEFAULT_TIMEOUT = 120.0


def encode_frame(tag: int, session_id: bytes, payload: bytes) -> bytes:
    if len(session_id) != SESSION_ID_LEN:
        raise ValueError("session id must be 16 bytes")
    return HEADER.pack(1 + SESSION_ID_LEN + len(payload), tag, session_id) + payload


def decode_frame(buf: bytes) -> tuple[int, bytes, bytes]:
    length, tag, sid = HEADER.unpack_from(buf)
    if length != len(buf) - 4:
        raise NetworkError("frame length mismatch")
    return tag, sid, bytes(buf[HEADER.size :])


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            raise NetworkError("connection closed")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> tuple[int, bytes, bytes]:
    head = _recv_exact(sock, HEADER.size)
    length, tag, sid = HEADER.unpack(head)
    payload = _recv_exact(sock, length - 1 - SESSION_ID_LEN)
    return tag, sid, payload


class _Mailbox:
    def __init__(self):
        self._lock = threading.Lock()
        self._queues: dict[tuple[bytes, int], queue.Queue] = defaultdict(queue.Queue)

    def queue(self, sid: bytes, sender: int) -> queue.Queue:
        with self._lock:
            return self._queues[(sid, sender)]

    def put(self, sid: bytes, sender: int, tag: int, payload: bytes) -> None:
        self.queue(sid, sender).put((tag, payload))

    def release(self, sid: bytes) -> None:
        with self._lock:
            for key in [k for k in self._queues if k[0] == sid]:
                del self._queues[key]


class Hub:
    """One party's view of the network."""

    party: int

    def __init__(self, party: int, timeout: float = DEFAULT_TIMEOUT):
        self.party = party
        self.timeout = timeout
        self.mailbox = _Mailbox()

    def _deliver(self, to: int, frame_tag: int, sid: bytes, payload: bytes) -> None:
        raise NotImplementedError

    def send(self, sid: bytes, to: int, tag: int, payload: bytes) -> None:
        if to == self.party:
            raise ValueError("cannot send to self")
        self._deliver(to, tag, sid, payload)

    def recv(self, sid: bytes, sender: int, tag: int) -> bytes:
        try:
            got_tag, payload = self.mailbox.queue(sid, sender).get(timeout=self.timeout)
        except queue.Empty:
            raise NetworkError(f"party {self.party}: timed out waiting for party {sender}") from None
        if got_tag == T_ABORT:
            raise ProtocolAbort("peer-abort", payload.decode(errors="replace"))
        if got_tag != tag:
            raise ProtocolAbort("protocol-desync", f"expected tag {tag}, got {got_tag} from {sender}")
        return payload

    def release(self, sid: bytes) -> None:
        self.mailbox.release(sid)

    def close(self) -> None:
        pass


class LocalNetwork:
    """In-process network connecting three hubs through queues."""

    def __init__(self, timeout: float = DEFAULT_TIMEOUT):
        self.hubs = {i: LocalHub(i, self, timeout) for i in (1, 2, 3)}
        self.tamper = None  # optional callable(frm, to, tag, payload) -> payload

    def hub(self, party: int) -> "LocalHub":
        return self.hubs[party]


class LocalHub(Hub):
    def __init__(self, party: int, network: LocalNetwork, timeout: float):
        super().__init__(party, timeout)
        self.network = network

    def _deliver(self, to, tag, sid, payload):
        if self.network.tamper is not None:
            payload = self.network.tamper(self.party, to, tag, payload)
        self.network.hubs[to].mailbox.put(sid, self.party, tag, payload)


class TcpHub(Hub):
    """Persistent TCP connections, one per party pair.

    The lower-indexed party of each pair dials; the other accepts.
    """

    def __init__(self, party: int, listen: tuple[str, int], peers: dict[int, tuple[str, int]],
                 timeout: float = DEFAULT_TIMEOUT, connect_timeout: float = 30.0):
        super().__init__(party, timeout)
        self.listen_addr = listen
        self.peers = {k: v for k, v in peers.items() if k != party}
        self.connect_timeout = connect_timeout
        self._socks: dict[int, socket.socket] = {}
        # peers that completed the handshake; a later drop must not block readiness
        self._greeted: set[int] = set()
        self._send_locks: dict[int, threading.Lock] = {}
        self._ready = threading.Event()
        self._closed = False
        self._server: socket.socket | None = None

    @property
    def port(self) -> int:
        assert self._server is not None
        return self._server.getsockname()[1]

    def bind(self) -> None:
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind(self.listen_addr)
        srv.listen(4)
        self._server = srv

    def start(self) -> None:
        if self._server is None:
            self.bind()
        threading.Thread(target=self._accept_loop, daemon=True, name=f"hub{self.party}-accept").start()
        for peer in sorted(self.peers):
            if peer > self.party:
                threading.Thread(target=self._dial, args=(peer,), daemon=True).start()

    def wait_ready(self, timeout: float | None = None) -> None:
        deadline = time.monotonic() + (timeout if timeout is not None else self.connect_timeout)
        while len(self._greeted) < len(self.peers):
            if time.monotonic() > deadline:
                missing = sorted(set(self.peers) - self._greeted)
                raise NetworkError(f"party {self.party}: peers {missing} unreachable")
            time.sleep(0.01)

    def _register(self, peer: int, sock: socket.socket) -> None:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._send_locks[peer] = threading.Lock()
        self._socks[peer] = sock
        self._greeted.add(peer)
        threading.Thread(target=self._read_loop, args=(peer, sock), daemon=True,
                         name=f"hub{self.party}-from{peer}").start()

    def _dial(self, peer: int) -> None:
        deadline = time.monotonic() + self.connect_timeout
        while not self._closed:
            try:
                sock = socket.create_connection(self.peers[peer], timeout=5)
                sock.settimeout(None)
                sock.sendall(encode_frame(T_HELLO, bytes(SESSION_ID_LEN), bytes([self.party])))
                self._register(peer, sock)
                return
            except OSError:
                if time.monotonic() > deadline:
                    log.error("party %d could not reach party %d", self.party, peer)
                    return
                time.sleep(0.05)

    def _accept_loop(self) -> None:
        assert self._server is not None
        while not self._closed:
            try:
                sock, _ = self._server.accept()
            except OSError:
                return
            try:
                tag, _, payload = read_frame(sock)
            except NetworkError:
                sock.close()
                continue
            if tag != T_HELLO or len(payload) != 1 or payload[0] not in self.peers:
                sock.close()
                continue
            old = self._socks.get(payload[0])
            if old is not None:
                old.close()
            self._register(payload[0], sock)

    def _read_loop(self, peer: int, sock: socket.socket) -> None:
        while not self._closed:
            try:
                tag, sid, payload = read_frame(sock)
            except (NetworkError, OSError):
                if self._socks.get(peer) is sock:
                    del self._socks[peer]
                return
            self.mailbox.put(sid, peer, tag, payload)

    def _deliver(self, to, tag, sid, payload):
        sock = self._socks.get(to)
        if sock is None:
            self.wait_ready(timeout=5)
            sock = self._socks.get(to)
            if sock is None:
                raise NetworkError(f"party {self.party}: no connection to party {to}")
        frame = encode_frame(tag, sid, payload)
        try:
            with self._send_locks[to]:
                sock.sendall(frame)
        except OSError as exc:
            raise NetworkError(f"party {self.party}: send to {to} failed: {exc}") from exc

    def close(self) -> None:
        self._closed = True
        if self._server is not None:
            self._server.close()
        for s in list(self._socks.values()):
            try:
                s.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            s.close()
        self._socks.clear()
