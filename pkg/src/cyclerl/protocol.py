"""Framed JSON wire protocol between the master and its minions.

Every message on the wire is a 4-byte big-endian unsigned length followed by
that many bytes of UTF-8 JSON.  The JSON envelope always carries a message
type from a closed set, the training cycle it belongs to, and a payload
object.  Oversized or malformed frames raise ProtocolError rather than being
silently dropped, so a confused peer is detected at the first bad message.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

PROTOCOL_VERSION = 1

MAX_FRAME_BYTES = 256 * 1024 * 1024

HEADER = struct.Struct(">I")

MESSAGE_TYPES = frozenset({
    "hello",
    "hello_ack",
    "heartbeat",
    "model_broadcast",
    "generate_training_data",
    "generate_validation_data",
    "experience_upload",
    "error",
    "shutdown",
})


class ProtocolError(Exception):
    """A frame or envelope that violates the wire contract."""


def frame(payload: bytes) -> bytes:
    """Prefix raw payload bytes with their big-endian length."""
    if len(payload) > MAX_FRAME_BYTES:
        raise ProtocolError(
            f"frame of {len(payload)} bytes exceeds the {MAX_FRAME_BYTES} limit")
    if not payload:
        raise ProtocolError("refusing to send an empty frame")
    return HEADER.pack(len(payload)) + payload


class FrameDecoder:
    """Incremental deframer; feed() arbitrary chunks, get whole payloads back."""

    def __init__(self):
        self._buf = bytearray()
        self._expected = None

    def feed(self, chunk: bytes) -> list:
        self._buf.extend(chunk)
        out = []
        while True:
            if self._expected is None:
                if len(self._buf) < HEADER.size:
                    break
                (length,) = HEADER.unpack(bytes(self._buf[:HEADER.size]))
                if length == 0:
                    raise ProtocolError("zero-length frame")
                if length > MAX_FRAME_BYTES:
                    raise ProtocolError(
                        f"peer announced a {length}-byte frame, over the "
                        f"{MAX_FRAME_BYTES} limit")
                del self._buf[:HEADER.size]
                self._expected = length
            if len(self._buf) < self._expected:
                break
            out.append(bytes(self._buf[:self._expected]))
            del self._buf[:self._expected]
            self._expected = None
        return out

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


@dataclass
class WireMessage:
    """Envelope for everything that crosses the wire."""

    type: str
    cycle: int = 0
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.type not in MESSAGE_TYPES:
            raise ProtocolError(f"unknown message type {self.type!r}")
        if not isinstance(self.cycle, int) or isinstance(self.cycle, bool):
            raise ProtocolError("cycle must be an integer")
        if not isinstance(self.payload, dict):
            raise ProtocolError("payload must be an object")

    def encode(self) -> bytes:
        """Serialize to a complete, length-prefixed frame."""
        body = json.dumps(
            {"type": self.type, "cycle": self.cycle, "payload": self.payload}
        ).encode("utf-8")
        return frame(body)

    @classmethod
    def decode_payload(cls, payload: bytes) -> "WireMessage":
        """Parse one deframed payload into a validated envelope."""
        try:
            obj = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"frame is not valid UTF-8 JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ProtocolError("envelope must be a JSON object")
        extra = set(obj) - {"type", "cycle", "payload"}
        if extra:
            raise ProtocolError(f"unexpected envelope fields {sorted(extra)}")
        if "type" not in obj:
            raise ProtocolError("envelope has no type")
        return cls(obj["type"], obj.get("cycle", 0), obj.get("payload", {}))


def send_message(sock, message: WireMessage):
    sock.sendall(message.encode())


def split_workload(total: int, num_workers: int) -> list:
    """Distribute ``total`` episodes over workers as evenly as possible.

    The counts sum to ``total`` exactly and differ by at most one; earlier
    workers receive the remainder.
    """
    if num_workers < 1:
        raise ValueError("num_workers must be >= 1")
    if total < 0:
        raise ValueError("total must be >= 0")
    base, rem = divmod(total, num_workers)
    return [base + 1] * rem + [base] * (num_workers - rem)
