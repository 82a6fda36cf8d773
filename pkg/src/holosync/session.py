"""Authoritative session state and the replica application rules.

The server stamps every accepted write with a strictly increasing sequence
number. Replicas (and the server itself) mutate state only through
``apply_envelope_to_state``, so convergence under reordering reduces to
that function being order-insensitive: absolute pose writes and content
attributes resolve by highest seq, removals leave tombstones, and
command-derived ids are functions of the stamped seq.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .geometry import (
    ContentElement,
    DeviceKind,
    DeviceRecord,
    Pose,
    Presence,
    ScreenExtents,
    SHARED_SPACE,
)
from .protocol import (
    Command,
    ContentRemove,
    ContentUpsert,
    Envelope,
    Join,
    PoseUpdate,
    canonical_json,
    pose_from_json,
    pose_to_json,
)


class SessionError(Exception):
    pass


class SessionLoadError(SessionError):
    pass


@dataclass
class Link:
    link_id: str
    source: str  # element_id
    target: str  # device_id or element_id
    author: str  # device_id


@dataclass
class SnapshotRecord:
    snapshot_id: str
    source_device: str
    elements: dict[str, ContentElement]  # deep copies, immutable by convention
    display_pose: Pose


@dataclass
class SessionState:
    session_id: str
    devices: dict[str, DeviceRecord] = field(default_factory=dict)
    elements: dict[str, ContentElement] = field(default_factory=dict)
    links: list[Link] = field(default_factory=list)
    groups: dict[str, list[str]] = field(default_factory=dict)
    snapshots: list[SnapshotRecord] = field(default_factory=list)
    seq: int = 0
    # element_id -> seq of its removal; writes at or below it are stale
    tombstones: dict[str, int] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Canonical dict form (wire snapshots, persistence, hashing)


def _device_to_dict(d: DeviceRecord) -> dict:
    return {
        "kind": d.kind.value,
        "extents": [float(d.extents.width), float(d.extents.height)],
        "pose": pose_to_json(d.pose),
        "presence": d.presence.value,
        "last_seq": d.last_seq,
    }


def _device_from_dict(device_id: str, d: dict) -> DeviceRecord:
    return DeviceRecord(
        device_id=device_id,
        kind=DeviceKind(d["kind"]),
        extents=ScreenExtents(float(d["extents"][0]), float(d["extents"][1])),
        pose=pose_from_json(d["pose"]),
        presence=Presence(d["presence"]),
        last_seq=int(d["last_seq"]),
    )


def _element_to_dict(e: ContentElement) -> dict:
    return {
        "owner": e.owner_device,
        "attrs": dict(sorted(e.attributes.items())),
        "attr_seqs": dict(sorted(e.attribute_seqs.items())),
    }


def _element_from_dict(element_id: str, d: dict) -> ContentElement:
    return ContentElement(
        element_id=element_id,
        owner_device=d["owner"],
        attributes=dict(d["attrs"]),
        attribute_seqs={k: int(v) for k, v in d["attr_seqs"].items()},
    )


def state_to_dict(state: SessionState) -> dict:
    return {
        "session_id": state.session_id,
        "seq": state.seq,
        "devices": {i: _device_to_dict(d) for i, d in sorted(state.devices.items())},
        "elements": {i: _element_to_dict(e) for i, e in sorted(state.elements.items())},
        "links": [
            {"link_id": l.link_id, "source": l.source, "target": l.target, "author": l.author}
            for l in sorted(state.links, key=lambda l: l.link_id)
        ],
        "groups": {g: sorted(m) for g, m in sorted(state.groups.items())},
        "snapshots": [
            {
                "snapshot_id": s.snapshot_id,
                "source_device": s.source_device,
                "elements": {i: _element_to_dict(e) for i, e in sorted(s.elements.items())},
                "display_pose": pose_to_json(s.display_pose),
            }
            for s in state.snapshots
        ],
        "tombstones": dict(sorted(state.tombstones.items())),
    }


def state_from_dict(d: dict) -> SessionState:
    try:
        state = SessionState(session_id=str(d["session_id"]), seq=int(d["seq"]))
        for i, dd in d["devices"].items():
            state.devices[i] = _device_from_dict(i, dd)
        for i, ed in d["elements"].items():
            state.elements[i] = _element_from_dict(i, ed)
        for ld in d["links"]:
            state.links.append(
                Link(
                    link_id=str(ld["link_id"]),
                    source=str(ld["source"]),
                    target=str(ld["target"]),
                    author=str(ld["author"]),
                )
            )
        for g, members in d["groups"].items():
            state.groups[g] = [str(m) for m in members]
        for sd in d.get("snapshots", []):
            state.snapshots.append(
                SnapshotRecord(
                    snapshot_id=str(sd["snapshot_id"]),
                    source_device=str(sd["source_device"]),
                    elements={
                        i: _element_from_dict(i, ed) for i, ed in sd["elements"].items()
                    },
                    display_pose=pose_from_json(sd["display_pose"]),
                )
            )
        state.tombstones = {str(k): int(v) for k, v in d.get("tombstones", {}).items()}
        return state
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise SessionLoadError(f"malformed session state: {exc}") from exc


def state_hash(state: SessionState) -> str:
    """Digest over the replicated portion: devices, elements, links, groups."""
    d = state_to_dict(state)
    doc = {k: d[k] for k in ("devices", "elements", "links", "groups")}
    return hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()


def save_session(state: SessionState, destination: str | Path) -> None:
    Path(destination).write_text(canonical_json(state_to_dict(state)), encoding="utf-8")


def load_session(source: str | Path) -> SessionState:
    try:
        text = Path(source).read_text(encoding="utf-8")
    except OSError as exc:
        raise SessionLoadError(f"cannot read session file: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SessionLoadError(f"corrupt session file: {exc}") from exc
    if not isinstance(doc, dict):
        raise SessionLoadError("corrupt session file: not an object")
    return state_from_dict(doc)


# ---------------------------------------------------------------------------
# Replica application


OWNER_ATTR = "__owner"


def _link_seq(link: Link) -> int:
    try:
        return int(link.link_id.lstrip("l"))
    except ValueError:
        return 0


def apply_envelope_to_state(state: SessionState, env: Envelope) -> None:
    """Apply a server-stamped envelope; order-insensitive given seq stamps.

    Commands with relative or geometry-dependent effects (align, group_move,
    snap, possession, pour) are expanded by the server into absolute writes
    and are no-ops here. Element ownership rides the reserved ``__owner``
    attribute so it resolves by the same per-attribute LWW rule.
    """
    if env.seq <= 0:
        raise SessionError("cannot apply an unstamped envelope")
    state.seq = max(state.seq, env.seq)
    p = env.payload

    if isinstance(p, Join):
        dev = state.devices.get(env.sender)
        if dev is None:
            state.devices[env.sender] = DeviceRecord(
                device_id=env.sender,
                kind=DeviceKind(p.kind),
                extents=ScreenExtents(p.width, p.height),
                presence=Presence(p.presence),
                last_seq=env.seq,
            )
        else:
            # a reordered pose update created a placeholder; fill in the
            # descriptor without clobbering the newer pose
            dev.kind = DeviceKind(p.kind)
            dev.extents = ScreenExtents(p.width, p.height)
            dev.presence = Presence(p.presence)
        return

    if isinstance(p, PoseUpdate):
        dev = state.devices.get(p.device_id)
        if dev is None:
            dev = DeviceRecord(device_id=p.device_id)
            state.devices[p.device_id] = dev
        if env.seq > dev.last_seq:
            dev.pose = p.pose
            dev.last_seq = env.seq
        return

    if isinstance(p, ContentUpsert):
        if state.tombstones.get(p.element_id, 0) >= env.seq:
            return
        el = state.elements.get(p.element_id)
        if el is None:
            el = ContentElement(element_id=p.element_id, owner_device=SHARED_SPACE)
            state.elements[p.element_id] = el
        attrs = dict(p.attributes)
        if p.owner_device is not None:
            attrs[OWNER_ATTR] = p.owner_device
        for name, value in attrs.items():
            el.set_attribute(name, value, env.seq)
        el.owner_device = el.attributes.get(OWNER_ATTR, SHARED_SPACE)
        return

    if isinstance(p, ContentRemove):
        prior = state.tombstones.get(p.element_id, 0)
        state.tombstones[p.element_id] = max(prior, env.seq)
        el = state.elements.get(p.element_id)
        if el is not None:
            # strip writes the removal supersedes; newer ones survive it
            for name in [n for n, s in el.attribute_seqs.items() if s <= env.seq]:
                del el.attributes[name]
                del el.attribute_seqs[name]
            if not el.attributes:
                del state.elements[p.element_id]
            else:
                el.owner_device = el.attributes.get(OWNER_ATTR, SHARED_SPACE)
        state.links = [
            l
            for l in state.links
            if not (
                (l.source == p.element_id or l.target == p.element_id)
                and _link_seq(l) <= env.seq
            )
        ]
        return

    if isinstance(p, Command):
        if p.name == "group_create":
            ids = sorted(str(i) for i in p.params.get("ids", []))
            state.groups[f"g{env.seq}"] = ids
        elif p.name == "link_create":
            source = str(p.params["source"])
            target = str(p.params["target"])
            if state.tombstones.get(source, 0) >= env.seq:
                return
            if state.tombstones.get(target, 0) >= env.seq:
                return
            state.links.append(
                Link(link_id=f"l{env.seq}", source=source, target=target, author=env.sender)
            )
        return
    # InteractionEvent / Welcome / StreamFrameHeader / Error: no state effect


def new_replica(session_id: str) -> SessionState:
    return SessionState(session_id=session_id)
