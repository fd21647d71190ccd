"""Length-prefixed binary messages exchanged by learner, samplers and evaluator.

Frame layout: u32 little-endian frame length, u8 type tag, payload. The
length counts the type byte plus the payload, so an empty HELLO is the five
bytes ``01 00 00 00 01``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from ..errors import ProtocolError
from ..transition import Transition

MAX_FRAME = 64 * 1024 * 1024
_HEADER = struct.Struct("<IB")


class MsgType(IntEnum):
    HELLO = 1
    GET_WEIGHTS = 2
    WEIGHTS = 3
    EPISODE = 4
    EVAL_RESULT = 5
    SHUTDOWN = 6


@dataclass(frozen=True)
class Message:
    type: MsgType
    payload: bytes = b""


def encode_message(msg: Message) -> bytes:
    try:
        tag = MsgType(msg.type)
    except ValueError:
        raise ProtocolError(f"unknown message type {msg.type}", tag=int(msg.type)) from None
    payload = bytes(msg.payload)
    if len(payload) + 1 > MAX_FRAME:
        raise ProtocolError(f"frame of {len(payload) + 1} bytes exceeds the {MAX_FRAME}-byte limit", tag=int(tag))
    return _HEADER.pack(len(payload) + 1, int(tag)) + payload


def _check_header(length: int, tag: int) -> MsgType:
    if length < 1:
        raise ProtocolError("frame length must count the type byte", tag=tag)
    if length > MAX_FRAME:
        raise ProtocolError(f"frame of {length} bytes exceeds the {MAX_FRAME}-byte limit", tag=tag)
    try:
        return MsgType(tag)
    except ValueError:
        raise ProtocolError(f"unknown message type {tag}", tag=tag) from None


def decode_message(data: bytes) -> Message:
    """Decode exactly one frame; any length mismatch is a :class:`ProtocolError`."""
    if len(data) < _HEADER.size:
        raise ProtocolError(f"frame shorter than the {_HEADER.size}-byte header")
    length, tag = _HEADER.unpack_from(data)
    mtype = _check_header(length, tag)
    if len(data) != 4 + length:
        raise ProtocolError(f"frame declares {length} bytes after the prefix, got {len(data) - 4}", tag=tag)
    return Message(mtype, bytes(data[_HEADER.size:]))


class StreamDecoder:
    """Incremental decoder for a byte stream.

    ``feed`` appends bytes; ``next`` returns the next complete message or
    ``None`` when more bytes are needed. Header errors surface as soon as the
    five header bytes are available, before any payload is buffered.
    """

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> None:
        self._buf.extend(data)

    @property
    def buffered(self) -> int:
        return len(self._buf)

    def next(self) -> Message | None:
        if len(self._buf) < _HEADER.size:
            return None
        length, tag = _HEADER.unpack_from(self._buf)
        mtype = _check_header(length, tag)
        end = 4 + length
        if len(self._buf) < end:
            return None
        payload = bytes(self._buf[_HEADER.size:end])
        del self._buf[:end]
        return Message(mtype, payload)

    def drain(self) -> list[Message]:
        out = []
        while (m := self.next()) is not None:
            out.append(m)
        return out


# ------------------------------------------------------------------ payloads


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 255:
        raise ProtocolError("string field longer than 255 bytes")
    return struct.pack("<B", len(raw)) + raw


class _Reader:
    def __init__(self, data: bytes, tag: MsgType):
        self.view = memoryview(data)
        self.off = 0
        self.tag = tag

    def take(self, fmt: str):
        try:
            vals = struct.unpack_from(fmt, self.view, self.off)
        except struct.error:
            raise ProtocolError(f"truncated {self.tag.name} payload", tag=int(self.tag)) from None
        self.off += struct.calcsize(fmt)
        return vals

    def raw(self, n: int) -> bytes:
        if self.off + n > len(self.view):
            raise ProtocolError(f"truncated {self.tag.name} payload", tag=int(self.tag))
        out = bytes(self.view[self.off:self.off + n])
        self.off += n
        return out

    def string(self) -> str:
        (n,) = self.take("<B")
        try:
            return self.raw(n).decode("utf-8")
        except UnicodeDecodeError:
            raise ProtocolError(f"bad string in {self.tag.name} payload", tag=int(self.tag)) from None

    def finish(self) -> None:
        if self.off != len(self.view):
            raise ProtocolError(f"{len(self.view) - self.off} trailing bytes in {self.tag.name} payload",
                                tag=int(self.tag))


def weights_message(version: int, checkpoint: bytes) -> Message:
    return Message(MsgType.WEIGHTS, struct.pack("<Q", version) + checkpoint)


def parse_weights(msg: Message) -> tuple[int, bytes]:
    if msg.type != MsgType.WEIGHTS:
        raise ProtocolError(f"expected WEIGHTS, got {MsgType(msg.type).name}", tag=int(msg.type))
    r = _Reader(msg.payload, MsgType.WEIGHTS)
    (version,) = r.take("<Q")
    return version, bytes(r.view[r.off:])


def json_message(mtype: MsgType, obj) -> Message:
    return Message(mtype, json.dumps(obj, sort_keys=True).encode("utf-8"))


def parse_json(msg: Message):
    if not msg.payload:
        return {}
    try:
        return json.loads(msg.payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"bad JSON in {MsgType(msg.type).name}: {exc}", tag=int(msg.type)) from None


@dataclass
class EpisodeRecord:
    """One finished episode as shipped from a sampler to the learner."""

    transitions: list[Transition]
    obs_dim: int
    act_dim: int
    layout: str = "raw"
    weights_version: int = 0
    seed: int = 0
    sampler_id: int = 0
    noise_mode: str = "none"
    return_raw: float = 0.0
    return_shaped: float = 0.0
    distance: float = 0.0
    fell: bool = False
    steps: int = 0
    substeps: int = 0
    extra: dict = field(default_factory=dict)


_EP_HEAD = struct.Struct("<IIIQQIdddBII")


def episode_message(ep: EpisodeRecord) -> Message:
    """Header, layout and noise tags, then per transition fp32 ``s, a, r, s', done``."""
    n, od, ad = len(ep.transitions), ep.obs_dim, ep.act_dim
    rows = np.empty((n, 2 * od + ad + 2), dtype="<f4")
    for i, t in enumerate(ep.transitions):
        rows[i, :od] = t.s
        rows[i, od:od + ad] = t.a
        rows[i, od + ad] = t.r
        rows[i, od + ad + 1:2 * od + ad + 1] = t.s_next
        rows[i, -1] = float(t.done)
    head = _EP_HEAD.pack(n, od, ad, ep.weights_version, ep.seed, ep.sampler_id, ep.return_raw,
                         ep.return_shaped, ep.distance, int(ep.fell), ep.steps, ep.substeps)
    extra = json.dumps(ep.extra, sort_keys=True).encode("utf-8")
    return Message(MsgType.EPISODE, head + _pack_str(ep.layout) + _pack_str(ep.noise_mode)
                   + struct.pack("<I", len(extra)) + extra + rows.tobytes())


def parse_episode(msg: Message) -> EpisodeRecord:
    if msg.type != MsgType.EPISODE:
        raise ProtocolError(f"expected EPISODE, got {MsgType(msg.type).name}", tag=int(msg.type))
    r = _Reader(msg.payload, MsgType.EPISODE)
    (n, od, ad, version, seed, sid, ret_raw, ret_shaped, dist, fell, steps, substeps) = r.take(_EP_HEAD.format)
    layout = r.string()
    mode = r.string()
    (n_extra,) = r.take("<I")
    try:
        extra = json.loads(r.raw(n_extra).decode("utf-8")) if n_extra else {}
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ProtocolError("bad extra field in EPISODE payload", tag=int(MsgType.EPISODE)) from None
    width = 2 * od + ad + 2
    rows = np.frombuffer(r.raw(4 * n * width), dtype="<f4").reshape(n, width).astype(np.float32)
    r.finish()
    ts = [Transition(row[:od].copy(), row[od:od + ad].copy(), float(row[od + ad]),
                     row[od + ad + 1:2 * od + ad + 1].copy(), bool(row[-1]), layout=layout) for row in rows]
    return EpisodeRecord(ts, od, ad, layout, version, seed, sid, mode, ret_raw, ret_shaped, dist, bool(fell),
                         steps, substeps, extra)
