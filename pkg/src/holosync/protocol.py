"""Message catalog and codecs for everything that crosses the network.

Control plane: canonical JSON text (sorted keys, compact separators, no
NaN/Inf) so any two encodings of equal envelopes are byte-identical.
Data plane: compact binary frames with the layout

    magic "HDPC" | version u8 | kind u8 | frame_id u32 LE | count u32 LE | payload

Point-cloud payloads are packed 9-byte points (see pointcloud module);
hand payloads carry a skeleton frame.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Any, Optional, Union

from .geometry import Pose, Quat, Vec3

PROTOCOL_VERSION = 1
STREAM_MAGIC = b"HDPC"
STREAM_HEADER_SIZE = 14

STREAM_KIND_POINTCLOUD = 0
STREAM_KIND_HAND = 1
_STREAM_KIND_NAMES = {STREAM_KIND_POINTCLOUD: "pointcloud", STREAM_KIND_HAND: "hand"}
_STREAM_KIND_CODES = {v: k for k, v in _STREAM_KIND_NAMES.items()}

POINT_BYTES = 9


class ProtocolError(Exception):
    pass


class EncodeError(ProtocolError):
    pass


class DecodeError(ProtocolError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (offset {offset})")
        self.offset = offset


class VersionError(DecodeError):
    pass


# ---------------------------------------------------------------------------
# Payload variants


@dataclass(frozen=True)
class Join:
    kind: str
    width: float
    height: float
    presence: str


@dataclass(frozen=True)
class Welcome:
    device_id: str
    state: dict  # canonical SessionState dict (see session.state_to_dict)


@dataclass(frozen=True)
class PoseUpdate:
    device_id: str
    pose: Pose


@dataclass(frozen=True)
class ContentUpsert:
    element_id: str
    attributes: dict
    owner_device: Optional[str] = None


@dataclass(frozen=True)
class ContentRemove:
    element_id: str


COMMAND_NAMES = frozenset(
    {
        "snap_attach",
        "snap_release",
        "possess_release",
        "align",
        "group_create",
        "group_move",
        "pour",
        "record_snapshot",
        "revert",
        "link_create",
    }
)


@dataclass(frozen=True)
class Command:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.name not in COMMAND_NAMES:
            raise EncodeError(f"unknown command: {self.name}")


@dataclass(frozen=True)
class InteractionEvent:
    kind: str
    participants: tuple[str, ...]
    payload: dict = field(default_factory=dict)
    tick_time_s: float = 0.0


@dataclass(frozen=True)
class StreamFrameHeader:
    stream_kind: str  # "pointcloud" | "hand"
    frame_id: int
    count: int


@dataclass(frozen=True)
class ErrorPayload:
    code: str
    message: str


Payload = Union[
    Join,
    Welcome,
    PoseUpdate,
    ContentUpsert,
    ContentRemove,
    Command,
    InteractionEvent,
    StreamFrameHeader,
    ErrorPayload,
]

_PAYLOAD_TAGS: dict[type, str] = {
    Join: "join",
    Welcome: "welcome",
    PoseUpdate: "pose_update",
    ContentUpsert: "content_upsert",
    ContentRemove: "content_remove",
    Command: "command",
    InteractionEvent: "event",
    StreamFrameHeader: "stream_header",
    ErrorPayload: "error",
}


@dataclass(frozen=True)
class Envelope:
    payload: Payload
    sender: str = ""
    seq: int = 0  # 0 = not yet assigned by the server
    timestamp_ms: int = 0
    protocol_version: int = PROTOCOL_VERSION


@dataclass(frozen=True)
class HandFrame:
    device_id: str
    joints: tuple[tuple[int, Vec3], ...]  # joint id 0 is the root bone
    root_scale: Vec3
    timestamp_ms: int

    def root_position(self) -> Vec3:
        for jid, pos in self.joints:
            if jid == 0:
                return pos
        raise ProtocolError("hand frame has no root joint")


# ---------------------------------------------------------------------------
# Pose <-> JSON


def pose_to_json(p: Pose) -> dict:
    # coerce to float so canonical encodings never depend on whether a
    # component was built from an int (json writes 0 and 0.0 differently)
    return {
        "pos": [float(p.position.x), float(p.position.y), float(p.position.z)],
        "rot": [float(p.rotation.x), float(p.rotation.y), float(p.rotation.z), float(p.rotation.w)],
        "scale": [float(p.scale.x), float(p.scale.y), float(p.scale.z)],
    }


def pose_from_json(d: Any) -> Pose:
    try:
        return Pose(
            position=Vec3(*(float(v) for v in d["pos"])),
            rotation=Quat(*(float(v) for v in d["rot"])),
            scale=Vec3(*(float(v) for v in d["scale"])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DecodeError(f"bad pose: {exc}") from exc


def _payload_to_json(p: Payload) -> dict:
    if isinstance(p, Join):
        return {
            "kind": p.kind,
            "width": float(p.width),
            "height": float(p.height),
            "presence": p.presence,
        }
    if isinstance(p, Welcome):
        return {"device_id": p.device_id, "state": p.state}
    if isinstance(p, PoseUpdate):
        return {"device_id": p.device_id, "pose": pose_to_json(p.pose)}
    if isinstance(p, ContentUpsert):
        body: dict = {"element_id": p.element_id, "attrs": p.attributes}
        if p.owner_device is not None:
            body["owner"] = p.owner_device
        return body
    if isinstance(p, ContentRemove):
        return {"element_id": p.element_id}
    if isinstance(p, Command):
        return {"name": p.name, "params": p.params}
    if isinstance(p, InteractionEvent):
        return {
            "kind": p.kind,
            "participants": list(p.participants),
            "payload": p.payload,
            "t": p.tick_time_s,
        }
    if isinstance(p, StreamFrameHeader):
        return {"stream": p.stream_kind, "frame_id": p.frame_id, "count": p.count}
    if isinstance(p, ErrorPayload):
        return {"code": p.code, "message": p.message}
    raise EncodeError(f"unknown payload type: {type(p).__name__}")


def _payload_from_json(tag: str, body: Any) -> Payload:
    if not isinstance(body, dict):
        raise DecodeError(f"payload body must be an object, got {type(body).__name__}")
    try:
        if tag == "join":
            return Join(
                kind=str(body["kind"]),
                width=float(body["width"]),
                height=float(body["height"]),
                presence=str(body["presence"]),
            )
        if tag == "welcome":
            return Welcome(device_id=str(body["device_id"]), state=body["state"])
        if tag == "pose_update":
            return PoseUpdate(device_id=str(body["device_id"]), pose=pose_from_json(body["pose"]))
        if tag == "content_upsert":
            return ContentUpsert(
                element_id=str(body["element_id"]),
                attributes=body["attrs"],
                owner_device=body.get("owner"),
            )
        if tag == "content_remove":
            return ContentRemove(element_id=str(body["element_id"]))
        if tag == "command":
            return Command(name=str(body["name"]), params=body.get("params", {}))
        if tag == "event":
            return InteractionEvent(
                kind=str(body["kind"]),
                participants=tuple(str(x) for x in body["participants"]),
                payload=body.get("payload", {}),
                tick_time_s=float(body.get("t", 0.0)),
            )
        if tag == "stream_header":
            return StreamFrameHeader(
                stream_kind=str(body["stream"]),
                frame_id=int(body["frame_id"]),
                count=int(body["count"]),
            )
        if tag == "error":
            return ErrorPayload(code=str(body["code"]), message=str(body["message"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise DecodeError(f"malformed {tag} payload: {exc}") from exc
    raise DecodeError(f"unknown payload tag: {tag!r}")


def canonical_json(obj: Any) -> str:
    """Deterministic JSON: sorted keys, compact, non-finite numbers rejected."""
    try:
        return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)
    except ValueError as exc:
        raise EncodeError(str(exc)) from exc
    except TypeError as exc:
        raise EncodeError(str(exc)) from exc


def encode_control(e: Envelope) -> bytes:
    doc = {
        "v": e.protocol_version,
        "seq": e.seq,
        "sender": e.sender,
        "ts": e.timestamp_ms,
        "type": _PAYLOAD_TAGS[type(e.payload)],
        "body": _payload_to_json(e.payload),
    }
    return canonical_json(doc).encode("utf-8")


def decode_control(data: bytes | str) -> Envelope:
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("invalid utf-8", offset=exc.start) from exc
    else:
        text = data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DecodeError(f"invalid JSON: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(doc, dict):
        raise DecodeError("envelope must be a JSON object")
    try:
        version = int(doc["v"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DecodeError("missing protocol version") from exc
    if version != PROTOCOL_VERSION:
        raise VersionError(f"unsupported protocol version {version}")
    try:
        tag = doc["type"]
        payload = _payload_from_json(tag, doc.get("body", {}))
        return Envelope(
            payload=payload,
            sender=str(doc.get("sender", "")),
            seq=int(doc.get("seq", 0)),
            timestamp_ms=int(doc.get("ts", 0)),
            protocol_version=version,
        )
    except DecodeError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DecodeError(f"malformed envelope: {exc}") from exc


# ---------------------------------------------------------------------------
# Binary stream frames

_HAND_FIXED = struct.Struct("<QH")  # timestamp_ms, device_id length
_HAND_SCALE = struct.Struct("<fff")
_HAND_JOINT = struct.Struct("<Hfff")


def encode_hand_payload(frame: HandFrame) -> bytes:
    frame.root_position()  # root must be present
    dev = frame.device_id.encode("utf-8")
    if len(dev) > 0xFFFF:
        raise EncodeError("device_id too long")
    parts = [_HAND_FIXED.pack(frame.timestamp_ms, len(dev)), dev]
    parts.append(_HAND_SCALE.pack(frame.root_scale.x, frame.root_scale.y, frame.root_scale.z))
    for jid, pos in frame.joints:
        parts.append(_HAND_JOINT.pack(jid, pos.x, pos.y, pos.z))
    return b"".join(parts)


def decode_hand_payload(data: bytes, count: int) -> HandFrame:
    try:
        ts, dlen = _HAND_FIXED.unpack_from(data, 0)
        off = _HAND_FIXED.size
        dev = data[off : off + dlen].decode("utf-8")
        off += dlen
        sx, sy, sz = _HAND_SCALE.unpack_from(data, off)
        off += _HAND_SCALE.size
        joints = []
        for _ in range(count):
            jid, x, y, z = _HAND_JOINT.unpack_from(data, off)
            off += _HAND_JOINT.size
            joints.append((jid, Vec3(x, y, z)))
        if off != len(data):
            raise DecodeError("trailing bytes in hand payload", offset=off)
    except struct.error as exc:
        raise DecodeError(f"truncated hand payload: {exc}") from exc
    frame = HandFrame(
        device_id=dev, joints=tuple(joints), root_scale=Vec3(sx, sy, sz), timestamp_ms=ts
    )
    frame.root_position()
    return frame


def encode_stream_frame(header: StreamFrameHeader, payload: bytes | HandFrame) -> bytes:
    if header.stream_kind not in _STREAM_KIND_CODES:
        raise EncodeError(f"unknown stream kind: {header.stream_kind}")
    kind = _STREAM_KIND_CODES[header.stream_kind]
    if kind == STREAM_KIND_POINTCLOUD:
        if not isinstance(payload, (bytes, bytearray)):
            raise EncodeError("point-cloud frame payload must be packed bytes")
        if len(payload) != header.count * POINT_BYTES:
            raise EncodeError(
                f"count mismatch: header says {header.count} points, "
                f"payload holds {len(payload) // POINT_BYTES}"
            )
        body = bytes(payload)
    else:
        if not isinstance(payload, HandFrame):
            raise EncodeError("hand frame payload must be a HandFrame")
        if len(payload.joints) != header.count:
            raise EncodeError(
                f"count mismatch: header says {header.count} joints, "
                f"frame holds {len(payload.joints)}"
            )
        body = encode_hand_payload(payload)
    head = STREAM_MAGIC + struct.pack("<BBII", PROTOCOL_VERSION, kind, header.frame_id, header.count)
    return head + body


def decode_stream_frame(data: bytes) -> tuple[StreamFrameHeader, bytes | HandFrame]:
    if len(data) < STREAM_HEADER_SIZE:
        raise DecodeError("buffer shorter than frame header", offset=len(data))
    if data[:4] != STREAM_MAGIC:
        raise DecodeError("bad magic", offset=0)
    version, kind, frame_id, count = struct.unpack_from("<BBII", data, 4)
    if version != PROTOCOL_VERSION:
        raise VersionError(f"unsupported stream frame version {version}", offset=4)
    if kind not in _STREAM_KIND_NAMES:
        raise DecodeError(f"unknown stream kind code {kind}", offset=5)
    header = StreamFrameHeader(
        stream_kind=_STREAM_KIND_NAMES[kind], frame_id=frame_id, count=count
    )
    body = data[STREAM_HEADER_SIZE:]
    if kind == STREAM_KIND_POINTCLOUD:
        if len(body) != count * POINT_BYTES:
            raise DecodeError(
                f"count mismatch: header says {count} points, payload holds "
                f"{len(body) // POINT_BYTES}",
                offset=STREAM_HEADER_SIZE,
            )
        return header, body
    return header, decode_hand_payload(body, count)
