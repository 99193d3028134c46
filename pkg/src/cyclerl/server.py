"""TCP server side of the master: sessions, liveness, and event delivery.

One thread accepts connections, one thread per minion reads its frames, and
a monitor thread watches heartbeats and task deadlines.  Everything the
training loop needs to react to (a minion joining, uploading experiences,
reporting an error, or dying) arrives on a single thread-safe event queue,
so the loop itself stays single-threaded.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time

from .protocol import (
    PROTOCOL_VERSION,
    FrameDecoder,
    ProtocolError,
    WireMessage,
    send_message,
)

logger = logging.getLogger(__name__)

IDLE = "idle"
WORKING = "working"
DEAD = "dead"


class MinionSession:
    """Bookkeeping for one connected minion."""

    def __init__(self, minion_id: str, sock: socket.socket, address, ordinal: int):
        self.minion_id = minion_id
        self.sock = sock
        self.address = address
        self.ordinal = ordinal
        self.state = IDLE
        self.last_heartbeat = time.monotonic()
        self.task = None
        self.task_started = None
        self.send_lock = threading.Lock()

    def __repr__(self):
        return f"MinionSession({self.minion_id!r}, state={self.state})"


class Server:
    """Accepts minions and turns their traffic into queue events.

    Events are (kind, session, data) tuples with kind one of "joined",
    "upload", "error", "died".  For uploads and errors, data is the decoded
    WireMessage; for deaths it is a reason string.
    """

    def __init__(self, host: str, port: int, handshake_info: dict,
                 heartbeat_timeout: float = 15.0, monitor_period: float = 1.0,
                 task_deadline: float = 600.0, handshake_timeout: float = 10.0):
        self.host = host
        self.port = port
        self.handshake_info = handshake_info
        self.heartbeat_timeout = heartbeat_timeout
        self.monitor_period = monitor_period
        self.task_deadline = task_deadline
        self.handshake_timeout = handshake_timeout
        self.events = queue.Queue()
        self._sessions = {}
        self._lock = threading.Lock()
        self._next_ordinal = 0
        self._listener = None
        self._threads = []
        self._stopping = threading.Event()

    # -- lifecycle ---------------------------------------------------------

    def start(self):
        """Bind and start the accept and monitor threads.

        Raises OSError if the port is already taken.
        """
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            listener.bind((self.host, self.port))
        except OSError:
            listener.close()
            raise
        listener.listen()
        listener.settimeout(0.2)
        self._listener = listener
        if self.port == 0:
            self.port = listener.getsockname()[1]
        for target in (self._accept_loop, self._monitor_loop):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)
        logger.info("listening on %s:%d", self.host, self.port)

    def stop(self, notify: bool = True):
        """Close the listener and all sessions, optionally sending shutdown."""
        self._stopping.set()
        if notify:
            self.broadcast(WireMessage("shutdown"))
        with self._lock:
            sessions = list(self._sessions.values())
        for session in sessions:
            self._close_session(session)
        if self._listener is not None:
            self._listener.close()
        for t in self._threads:
            t.join(timeout=2.0)

    # -- registry ----------------------------------------------------------

    def live_minions(self) -> list:
        with self._lock:
            return sorted(self._sessions.values(), key=lambda s: s.ordinal)

    def idle_minions(self) -> list:
        return [s for s in self.live_minions() if s.state == IDLE]

    def mark_working(self, session: MinionSession, task):
        with self._lock:
            session.state = WORKING
            session.task = task
            session.task_started = time.monotonic()

    def mark_idle(self, session: MinionSession):
        with self._lock:
            if session.state != DEAD:
                session.state = IDLE
            session.task = None
            session.task_started = None

    def _close_session(self, session: MinionSession):
        try:
            session.sock.close()
        except OSError:
            pass

    def declare_dead(self, session: MinionSession, reason: str):
        with self._lock:
            if session.state == DEAD:
                return
            session.state = DEAD
            self._sessions.pop(session.minion_id, None)
        self._close_session(session)
        logger.warning("minion %s declared dead: %s", session.minion_id, reason)
        self.events.put(("died", session, reason))

    # -- sending -----------------------------------------------------------

    def send(self, session: MinionSession, message: WireMessage) -> bool:
        """Send one message; a failed send kills the session."""
        try:
            with session.send_lock:
                send_message(session.sock, message)
            return True
        except OSError as exc:
            self.declare_dead(session, f"send failed: {exc}")
            return False

    def broadcast(self, message: WireMessage, sessions=None):
        for session in sessions if sessions is not None else self.live_minions():
            self.send(session, message)

    # -- internal threads --------------------------------------------------

    def _accept_loop(self):
        while not self._stopping.is_set():
            try:
                sock, address = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            t = threading.Thread(target=self._serve_connection,
                                 args=(sock, address), daemon=True)
            t.start()

    def _serve_connection(self, sock: socket.socket, address):
        session = None
        try:
            session = self._handshake(sock, address)
        except (ProtocolError, OSError, socket.timeout) as exc:
            logger.warning("handshake with %s failed: %s", address, exc)
            sock.close()
            return
        if session is None:
            sock.close()
            return
        self.events.put(("joined", session, None))
        self._reader_loop(session)

    def _handshake(self, sock: socket.socket, address):
        sock.settimeout(self.handshake_timeout)
        decoder = FrameDecoder()
        message = None
        while message is None:
            chunk = sock.recv(65536)
            if not chunk:
                raise ProtocolError("connection closed during handshake")
            payloads = decoder.feed(chunk)
            if payloads:
                message = WireMessage.decode_payload(payloads[0])
        if message.type != "hello":
            raise ProtocolError(f"expected hello, got {message.type}")
        version = message.payload.get("protocol_version")
        if version != PROTOCOL_VERSION:
            send_message(sock, WireMessage("error", payload={
                "reason": f"protocol version {version} not supported",
            }))
            raise ProtocolError(f"unsupported protocol version {version!r}")
        requested = str(message.payload.get("minion_id") or "minion")
        with self._lock:
            minion_id = requested
            suffix = 2
            while minion_id in self._sessions:
                minion_id = f"{requested}-{suffix}"
                suffix += 1
            session = MinionSession(minion_id, sock, address, self._next_ordinal)
            self._next_ordinal += 1
            self._sessions[minion_id] = session
        sock.settimeout(None)
        ack_payload = {
            "accepted": True,
            "minion_id": minion_id,
            "protocol_version": PROTOCOL_VERSION,
        }
        ack_payload.update(self.handshake_info)
        if not self.send(session, WireMessage("hello_ack", payload=ack_payload)):
            return None
        logger.info("minion %s joined from %s", minion_id, address)
        return session

    def _reader_loop(self, session: MinionSession):
        decoder = FrameDecoder()
        while session.state != DEAD and not self._stopping.is_set():
            try:
                chunk = session.sock.recv(1 << 20)
            except OSError:
                self.declare_dead(session, "socket error")
                return
            if not chunk:
                self.declare_dead(session, "connection closed")
                return
            session.last_heartbeat = time.monotonic()
            try:
                payloads = decoder.feed(chunk)
                messages = [WireMessage.decode_payload(p) for p in payloads]
            except ProtocolError as exc:
                self.declare_dead(session, f"protocol violation: {exc}")
                return
            for message in messages:
                self._dispatch(session, message)

    def _dispatch(self, session: MinionSession, message: WireMessage):
        if message.type == "heartbeat":
            return
        if message.type == "experience_upload":
            self.events.put(("upload", session, message))
        elif message.type == "error":
            self.events.put(("error", session, message))
        else:
            self.declare_dead(
                session, f"unexpected message type {message.type} after handshake")

    def _monitor_loop(self):
        while not self._stopping.is_set():
            time.sleep(self.monitor_period)
            now = time.monotonic()
            for session in self.live_minions():
                if now - session.last_heartbeat > self.heartbeat_timeout:
                    self.declare_dead(session, "heartbeat timeout")
                elif (session.state == WORKING and session.task_started is not None
                      and now - session.task_started > self.task_deadline):
                    self.declare_dead(session, "task deadline exceeded")
