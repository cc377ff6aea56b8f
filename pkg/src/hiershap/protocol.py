"""Remote-evaluator wire protocol: framing, codec, and the client.

Transport is a byte stream of length-prefixed frames, all integers
little-endian:

    frame  := u32 length, u8 type, payload      (length = 1 + len(payload))
    HELLO  := u32 width, u32 height, u8 channels, u32 classes,
              u8 bg_mode (0 uniform / 1 reference), u8 r, u8 g, u8 b
    EVAL   := u32 request_id, u32 mask_count,
              mask_count * (u32 span_count, span_count * (u32 start, u32 len))
    RESULT := u32 request_id, f32 scores (mask-major, classes per mask)
    ERROR  := u32 code, utf-8 message

A session opens with a client HELLO answered by a server HELLO echoing the
effective session parameters (the server fills in its class count when the
client sends 0). Masks travel as run-length spans over row-major pixel
order. RESULT frames may arrive out of request order; the client matches
them by id.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError, ProtocolError
from .games import CharacteristicGame
from .masking import Background, mask_to_spans

FRAME_HELLO = 1
FRAME_EVAL = 2
FRAME_RESULT = 3
FRAME_ERROR = 4

ERR_PROTOCOL = 1
ERR_HANDSHAKE = 2
ERR_MODEL = 3

MAX_FRAME_BYTES = 1 << 28


@dataclass(frozen=True)
class Hello:
    width: int
    height: int
    channels: int
    classes: int
    bg_mode: int
    bg_color: tuple[int, int, int]


def encode_frame(ftype: int, payload: bytes) -> bytes:
    return struct.pack("<IB", 1 + len(payload), ftype) + payload


def encode_hello(h: Hello) -> bytes:
    payload = struct.pack(
        "<IIBIBBBB",
        h.width,
        h.height,
        h.channels,
        h.classes,
        h.bg_mode,
        h.bg_color[0],
        h.bg_color[1],
        h.bg_color[2],
    )
    return encode_frame(FRAME_HELLO, payload)


def parse_hello(payload: bytes) -> Hello:
    if len(payload) != 17:
        raise ProtocolError(f"hello payload must be 17 bytes, got {len(payload)}")
    width, height, channels, classes, mode, r, g, b = struct.unpack("<IIBIBBBB", payload)
    return Hello(width, height, channels, classes, mode, (r, g, b))


def encode_eval(request_id: int, span_lists: list[list[tuple[int, int]]]) -> bytes:
    parts = [struct.pack("<II", request_id, len(span_lists))]
    for spans in span_lists:
        parts.append(struct.pack("<I", len(spans)))
        for start, length in spans:
            parts.append(struct.pack("<II", start, length))
    return encode_frame(FRAME_EVAL, b"".join(parts))


def parse_eval(payload: bytes) -> tuple[int, list[list[tuple[int, int]]]]:
    if len(payload) < 8:
        raise ProtocolError("eval payload too short")
    request_id, count = struct.unpack_from("<II", payload, 0)
    offset = 8
    span_lists = []
    for _ in range(count):
        if offset + 4 > len(payload):
            raise ProtocolError("eval payload truncated at span count")
        (span_count,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        if offset + 8 * span_count > len(payload):
            raise ProtocolError("eval payload truncated inside spans")
        spans = [
            struct.unpack_from("<II", payload, offset + 8 * k) for k in range(span_count)
        ]
        offset += 8 * span_count
        span_lists.append([(int(s), int(l)) for s, l in spans])
    if offset != len(payload):
        raise ProtocolError("eval payload has trailing bytes")
    return request_id, span_lists


def encode_result(request_id: int, scores: np.ndarray) -> bytes:
    flat = np.asarray(scores, dtype="<f4").ravel()
    return encode_frame(FRAME_RESULT, struct.pack("<I", request_id) + flat.tobytes())


def parse_result(payload: bytes) -> tuple[int, np.ndarray]:
    if len(payload) < 4 or (len(payload) - 4) % 4 != 0:
        raise ProtocolError("result payload malformed")
    (request_id,) = struct.unpack_from("<I", payload, 0)
    scores = np.frombuffer(payload, dtype="<f4", offset=4)
    return request_id, scores


def encode_error(code: int, message: str) -> bytes:
    return encode_frame(FRAME_ERROR, struct.pack("<I", code) + message.encode("utf-8"))


def parse_error(payload: bytes) -> tuple[int, str]:
    if len(payload) < 4:
        raise ProtocolError("error payload malformed")
    (code,) = struct.unpack_from("<I", payload, 0)
    return code, payload[4:].decode("utf-8", errors="replace")


def split_frames(buffer: bytes) -> tuple[list[tuple[int, bytes]], bytes]:
    """Complete (type, payload) frames from the buffer, plus the remainder."""
    frames = []
    offset = 0
    while len(buffer) - offset >= 5:
        (length,) = struct.unpack_from("<I", buffer, offset)
        if length < 1 or length > MAX_FRAME_BYTES:
            raise ProtocolError(f"bad frame length {length}")
        if len(buffer) - offset < 4 + length:
            break
        ftype = buffer[offset + 4]
        payload = buffer[offset + 5 : offset + 4 + length]
        frames.append((ftype, payload))
        offset += 4 + length
    return frames, buffer[offset:]


class FrameStream:
    """Blocking frame reader/writer over a connected socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._buffer = b""

    def send(self, frame: bytes) -> None:
        self.sock.sendall(frame)

    def recv_frame(self) -> tuple[int, bytes]:
        while True:
            frames, self._buffer = split_frames(self._buffer)
            if frames:
                # Requeue any extra frames for the next call.
                first, *rest = frames
                for ftype, payload in reversed(rest):
                    header = struct.pack("<IB", 1 + len(payload), ftype)
                    self._buffer = header + payload + self._buffer
                return first
            chunk = self.sock.recv(65536)
            if not chunk:
                raise ProtocolError("connection closed mid-stream")
            self._buffer += chunk


class BridgeClient:
    """Evaluator client for a remote model behind the wire protocol."""

    def __init__(
        self,
        address: str,
        width: int,
        height: int,
        channels: int = 3,
        background: Background | None = None,
        classes: int = 0,
        timeout: float = 30.0,
    ):
        host, _, port = address.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"bridge address must be host:port, got {address!r}")
        background = background or Background()
        bg_mode = 0 if background.mode == "uniform" else 1
        bg_color = background.color if background.mode == "uniform" else (0, 0, 0)
        try:
            sock = socket.create_connection((host, int(port)), timeout=timeout)
        except OSError as exc:
            raise EvaluationError(f"cannot reach bridge at {address}: {exc}") from exc
        sock.settimeout(timeout)
        self._stream = FrameStream(sock)
        self._next_id = 0
        self._pending: dict[int, np.ndarray] = {}
        self.address = address
        self.num_pixels = width * height
        hello = Hello(width, height, channels, classes, bg_mode, bg_color)
        self._stream.send(encode_hello(hello))
        ftype, payload = self._recv()
        if ftype == FRAME_ERROR:
            code, message = parse_error(payload)
            raise ProtocolError(f"bridge rejected handshake ({code}): {message}")
        if ftype != FRAME_HELLO:
            raise ProtocolError(f"expected hello ack, got frame type {ftype}")
        ack = parse_hello(payload)
        if (ack.width, ack.height) != (width, height):
            raise ProtocolError("bridge session dimensions do not match")
        if ack.classes < 1:
            raise ProtocolError("bridge reported no classes")
        self.session = ack

    def _recv(self) -> tuple[int, bytes]:
        try:
            return self._stream.recv_frame()
        except socket.timeout as exc:
            raise EvaluationError(f"bridge timed out: {exc}") from exc
        except OSError as exc:
            raise EvaluationError(f"bridge transport failed: {exc}") from exc

    def evaluate(self, masks) -> np.ndarray:
        request_id = self._next_id
        self._next_id += 1
        spans = [mask_to_spans(m, self.num_pixels) for m in masks]
        self._stream.send(encode_eval(request_id, spans))
        while request_id not in self._pending:
            ftype, payload = self._recv()
            if ftype == FRAME_ERROR:
                code, message = parse_error(payload)
                raise EvaluationError(f"bridge error ({code}): {message}")
            if ftype != FRAME_RESULT:
                raise ProtocolError(f"unexpected frame type {ftype} during eval")
            rid, scores = parse_result(payload)
            self._pending[rid] = scores
        scores = self._pending.pop(request_id)
        classes = self.session.classes
        if len(scores) != len(masks) * classes:
            raise ProtocolError(
                f"result carries {len(scores)} scores, expected {len(masks) * classes}"
            )
        return scores.astype(np.float64).reshape(len(masks), classes)

    def close(self) -> None:
        try:
            self._stream.sock.close()
        except OSError:
            pass


def bridge_game(
    address: str,
    width: int,
    height: int,
    channels: int = 3,
    background: Background | None = None,
    timeout: float = 30.0,
    name: str | None = None,
) -> CharacteristicGame:
    """Connect to a remote evaluator and wrap it as a characteristic game."""
    client = BridgeClient(address, width, height, channels, background, timeout=timeout)
    game = CharacteristicGame(
        client.evaluate,
        width * height,
        client.session.classes,
        name=name if name is not None else f"bridge:{address}",
    )
    game.client = client
    return game
