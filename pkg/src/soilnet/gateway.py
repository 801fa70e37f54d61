"""TCP ingestion gateway and publishing client.

The gateway accepts any number of concurrent node connections, classifies
each PUB frame (accept / duplicate / out-of-range / malformed), appends
accepted readings to the store and replies with ACK or ERR. Per-frame
errors never drop the connection or the server.
"""

from __future__ import annotations

import collections
import socket
import socketserver
import threading
import time

from soilnet.core import Channel, RawReading
from soilnet.protocol import (
    PROTO_VERSION,
    Ack,
    Err,
    Frame,
    GatewayState,
    Hello,
    Malformed,
    Pub,
    Topic,
    Verdict,
    classify_line,
    parse_frame,
    render_frame,
)
from soilnet.store import Store

DEFAULT_PORT = 1884  # 1883-adjacent; real MQTT brokers own 1883


class BindFailure(OSError):
    pass


class TransportClosed(ConnectionError):
    pass


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        server: Gateway = self.server  # type: ignore[assignment]
        while True:
            line = self.rfile.readline(4096)
            if not line:
                return
            reply = server.handle_line(line)
            if reply is not None:
                self.wfile.write(render_frame(reply).encode("ascii"))


class Gateway(socketserver.ThreadingTCPServer):
    """Threaded line-protocol server feeding a Store.

    Dedup state is seeded from the store on startup, so replaying a whole
    session after a restart appends nothing.
    """

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, listen_addr: tuple[str, int], store: Store, site: str = "site"):
        self.store = store
        self.site = site
        self.state = GatewayState()
        self._state_lock = threading.Lock()
        for (profile, depth, chan), seq in store.last_seqs().items():
            self.state.last_seen[(site, profile, depth, Channel(chan))] = seq
        try:
            super().__init__(listen_addr, _Handler)
        except OSError as e:
            raise BindFailure(str(e)) from e

    @property
    def bound_addr(self) -> tuple[str, int]:
        return self.server_address[:2]

    def handle_line(self, line: bytes) -> Frame | None:
        """Process one inbound frame line; returns the reply frame."""
        with self._state_lock:
            verdict, frame, reason = classify_line(self.state, line)
            if verdict is Verdict.ACCEPT:
                # Append inside the lock: per-stream seq order in the store
                # then matches accept order.
                self.store.append_reading(frame.to_reading(), recv_timestamp=int(time.time()))
        if verdict is Verdict.ACCEPT or verdict is Verdict.DUPLICATE:
            return Ack(frame.seq)
        if verdict is Verdict.OUT_OF_RANGE:
            return Err("out_of_range", f"value {frame.value!r} outside channel range")
        if verdict is Verdict.MALFORMED or (frame is None and reason is not None):
            return Err("malformed", reason)
        if isinstance(frame, Hello):
            return Ack(0)
        return None  # stray ACK/ERR from a peer: ignore

    def counters(self) -> dict:
        with self._state_lock:
            s = self.state
            return {
                "accepted": s.accepted,
                "duplicate": s.duplicate,
                "out_of_range": s.out_of_range,
                "malformed": s.malformed,
                "pub_total": s.pub_total,
            }


def serve(listen_addr: tuple[str, int], store: Store, site: str = "site") -> Gateway:
    """Start a gateway in a background thread; call .shutdown() to stop."""
    gw = Gateway(listen_addr, store, site)
    t = threading.Thread(target=gw.serve_forever, daemon=True)
    t.start()
    return gw


class GatewayClient:
    """Single-connection sequential publisher with at-least-once retry.

    On transport failure the client reconnects with exponential backoff
    (base 1 s, cap 60 s by default) and buffers up to ``buffer_max``
    readings, dropping the oldest beyond that (counted, never raising).
    """

    def __init__(
        self,
        addr: tuple[str, int],
        node_id: str,
        site: str = "site",
        ack_timeout_s: float = 5.0,
        backoff_base_s: float = 1.0,
        backoff_cap_s: float = 60.0,
        max_attempts: int = 8,
        buffer_max: int = 10000,
    ):
        self.addr = addr
        self.node_id = node_id
        self.site = site
        self.ack_timeout_s = ack_timeout_s
        self.backoff_base_s = backoff_base_s
        self.backoff_cap_s = backoff_cap_s
        self.max_attempts = max_attempts
        self.buffer = collections.deque(maxlen=buffer_max)
        self.counters = {"acked": 0, "rejected": 0, "dropped_overflow": 0, "retries": 0}
        self._sock: socket.socket | None = None
        self._rfile = None

    def connect(self) -> None:
        self.close()
        sock = socket.create_connection(self.addr, timeout=self.ack_timeout_s)
        sock.settimeout(self.ack_timeout_s)
        self._sock = sock
        self._rfile = sock.makefile("rb")
        self._send(Hello(self.node_id, PROTO_VERSION))
        reply = self._recv()
        if not isinstance(reply, Ack):
            raise TransportClosed(f"handshake rejected: {reply!r}")

    def close(self) -> None:
        if self._rfile is not None:
            try:
                self._rfile.close()
            except OSError:
                pass
            self._rfile = None
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def _send(self, frame: Frame) -> None:
        if self._sock is None:
            raise TransportClosed("not connected")
        try:
            self._sock.sendall(render_frame(frame).encode("ascii"))
        except OSError as e:
            raise TransportClosed(str(e)) from e

    def _recv(self) -> Frame:
        try:
            line = self._rfile.readline(4096)
        except OSError as e:
            raise TransportClosed(str(e)) from e
        if not line:
            raise TransportClosed("connection closed by gateway")
        return parse_frame(line)

    def _publish_once(self, reading: RawReading) -> str:
        topic = Topic(self.site, reading.profile_id, reading.depth_cm, reading.channel)
        self._send(Pub(topic, reading.seq, reading.timestamp, reading.value))
        reply = self._recv()
        if isinstance(reply, Ack):
            return "acknowledged"
        if isinstance(reply, Err):
            return "rejected"
        raise TransportClosed(f"unexpected reply {reply!r}")

    def publish(self, reading: RawReading) -> str:
        """Publish one reading; returns acknowledged | rejected | buffered."""
        self._flush_buffer()
        for attempt in range(self.max_attempts):
            try:
                if self._sock is None:
                    self.connect()
                status = self._publish_once(reading)
                self.counters["acked" if status == "acknowledged" else "rejected"] += 1
                return status
            except (TransportClosed, OSError, Malformed):
                self.close()
                self.counters["retries"] += 1
                if attempt < self.max_attempts - 1:
                    time.sleep(min(self.backoff_base_s * 2**attempt, self.backoff_cap_s))
        if len(self.buffer) == self.buffer.maxlen:
            self.counters["dropped_overflow"] += 1
        self.buffer.append(reading)
        return "buffered"

    def _flush_buffer(self) -> None:
        while self.buffer:
            reading = self.buffer[0]
            try:
                if self._sock is None:
                    self.connect()
                self._publish_once(reading)
            except (TransportClosed, OSError, Malformed):
                self.close()
                return
            self.buffer.popleft()
