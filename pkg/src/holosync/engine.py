"""Tick-driven interaction detectors and state machines.

The engine is deterministic: given the same sequence of session states and
tick intervals it produces the same events and writes. It never mutates
the session directly; it returns payloads for the hub to sequence. Only
holographic-remote devices are ever repositioned by snap, align, or group
moves; physical devices move only through their own pose updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

from .geometry import (
    ContentElement,
    DeviceRecord,
    GeometryError,
    Pose,
    Presence,
    Quat,
    SHARED_SPACE,
    Vec3,
    compose_pose,
    relative_pose,
    screen_gap,
    screen_plane,
)
from .protocol import (
    Command,
    ContentUpsert,
    HandFrame,
    InteractionEvent,
    PoseUpdate,
)
from .session import Link, SessionState, SnapshotRecord


class EngineError(Exception):
    pass


@dataclass(frozen=True)
class EngineConfig:
    tick_rate_hz: float = 60.0
    possession_distance_m: float = 0.05
    possession_hold_s: float = 1.0
    bump_gap_m: float = 0.02
    bump_speed_mps: float = 0.1
    bump_refractory_s: float = 1.0
    snap_attach_distance_m: float = 0.15
    snap_attach_dwell_s: float = 0.5
    # dwell-based auto attach shares geometry with possession overlap, so it
    # is off unless a scenario opts in; the explicit command always works
    snap_auto_attach: bool = False
    pour_radius_m: float = 0.15
    pour_roll_deg: float = 120.0
    pour_dwell_s: float = 0.3
    pour_refractory_s: float = 1.0
    flick_speed_mps: float = 0.5
    flick_offset_m: float = 0.3
    proxemic_zones: tuple[float, ...] = (0.3, 1.0, 3.0)
    proxemic_hysteresis: float = 0.10
    align_pitch_factor: float = 1.2
    stack_pitch_m: float = 0.05
    revert_distance_m: float = 0.05
    revert_hold_s: float = 1.0


# ---------------------------------------------------------------------------
# Possession state machine


class PossessionPhase(str, Enum):
    IDLE = "idle"
    ARMING = "arming"
    POSSESSED = "possessed"


@dataclass(frozen=True)
class PossessionFSM:
    local_device: str
    target_device: str
    phase: PossessionPhase = PossessionPhase.IDLE
    elapsed_s: float = 0.0
    d_threshold: float = 0.05
    t_hold: float = 1.0


def update_possession(
    fsm: PossessionFSM, distance: float, dt: float
) -> tuple[PossessionFSM, Optional[str]]:
    """One tick of the overlap-and-hold state machine.

    Returns the updated FSM and "possession_granted" on the grant tick.
    The hold boundary is strict: a distance equal to the threshold disrupts.
    """
    if distance < 0 or dt <= 0:
        raise EngineError("distance must be >= 0 and dt > 0")
    if fsm.phase == PossessionPhase.POSSESSED:
        return fsm, None
    if distance >= fsm.d_threshold:
        if fsm.phase == PossessionPhase.ARMING:
            return replace(fsm, phase=PossessionPhase.IDLE, elapsed_s=0.0), None
        return fsm, None
    elapsed = fsm.elapsed_s + dt
    if elapsed + 1e-9 >= fsm.t_hold:  # tolerate dt accumulation error
        return (
            replace(fsm, phase=PossessionPhase.POSSESSED, elapsed_s=fsm.t_hold),
            "possession_granted",
        )
    return replace(fsm, phase=PossessionPhase.ARMING, elapsed_s=elapsed), None


# ---------------------------------------------------------------------------
# Snapping


@dataclass
class SnapBinding:
    anchor_device: str
    snapped_device: str
    relative: Pose
    original_pose: Pose


# ---------------------------------------------------------------------------
# Pure spatial operations


def align_devices(
    devices: list[DeviceRecord],
    sort_key: Callable[[DeviceRecord], object],
    layout: str,
    origin: Pose = Pose(),
    config: EngineConfig = EngineConfig(),
) -> dict[str, Pose]:
    """Target poses laying the holographic devices out by ascending sort key.

    line: along local x; grid: row-major with ceil(sqrt(n)) columns;
    stack: along local z. Physical devices are excluded, never moved.
    """
    movable = [d for d in devices if d.presence == Presence.REMOTE_HOLOGRAPHIC]
    if not movable:
        return {}
    movable.sort(key=lambda d: (sort_key(d), d.device_id))
    max_w = max(d.extents.width * d.pose.scale.x for d in movable)
    max_h = max(d.extents.height * d.pose.scale.y for d in movable)
    pitch_x = config.align_pitch_factor * max_w
    pitch_y = config.align_pitch_factor * max_h
    out: dict[str, Pose] = {}
    if layout == "line":
        for i, d in enumerate(movable):
            out[d.device_id] = compose_pose(origin, Pose.from_translation(i * pitch_x, 0, 0))
    elif layout == "grid":
        cols = math.ceil(math.sqrt(len(movable)))
        for i, d in enumerate(movable):
            row, col = divmod(i, cols)
            out[d.device_id] = compose_pose(
                origin, Pose.from_translation(col * pitch_x, -row * pitch_y, 0)
            )
    elif layout == "stack":
        for i, d in enumerate(movable):
            out[d.device_id] = compose_pose(
                origin, Pose.from_translation(0, 0, i * config.stack_pitch_m)
            )
    else:
        raise EngineError(f"unknown layout: {layout}")
    for d in movable:
        out[d.device_id] = replace(out[d.device_id], scale=d.pose.scale)
    return out


def proxemic_level(distance: float, zones: tuple[float, ...] = (0.3, 1.0, 3.0)) -> int:
    """Number of zone thresholds at or below the distance."""
    if not zones or any(b <= a for a, b in zip(zones, zones[1:])):
        raise EngineError("zones must be nonempty and strictly ascending")
    return sum(1 for z in zones if z <= distance)


def extended_shared_to_local(
    device: DeviceRecord, shared_point: Vec3
) -> Optional[tuple[float, float]]:
    """Project a shared-space point onto the device's screen plane.

    Returns screen coordinates in meters (origin at the screen center), or
    None when the projection falls outside the extents. The element keeps
    its shared coordinates either way; visibility is a view concern.
    """
    local = device.pose.rotation.conjugate().rotate(shared_point - device.pose.position)
    hw = device.extents.width * device.pose.scale.x / 2.0
    hh = device.extents.height * device.pose.scale.y / 2.0
    if abs(local.x) > hw or abs(local.y) > hh:
        return None
    return (local.x, local.y)


def extended_local_to_shared(device: DeviceRecord, local_xy: tuple[float, float]) -> Vec3:
    """Inverse of extended_shared_to_local for on-plane points."""
    return device.pose.position + device.pose.rotation.rotate(
        Vec3(local_xy[0], local_xy[1], 0.0)
    )


@dataclass(frozen=True)
class AlignedVolume:
    """Axis-aligned box in its own frame, placed in the world by a pose."""

    min_corner: Vec3
    max_corner: Vec3
    pose: Pose = Pose()


def slice_plane(
    device: DeviceRecord, volume: AlignedVolume
) -> Optional[tuple[Vec3, Vec3, list[Vec3]]]:
    """Cross-section of the volume cut by the device's screen plane.

    Returns (plane center, plane normal, convex polygon in world space), or
    None when the plane misses the volume.
    """
    center, normal, _ = screen_plane(device)
    # work in the box frame: plane point/normal transformed in
    inv_rot = volume.pose.rotation.conjugate()
    sc = volume.pose.scale
    p_local = inv_rot.rotate(center - volume.pose.position)
    p_local = Vec3(p_local.x / sc.x, p_local.y / sc.y, p_local.z / sc.z)
    n_local = inv_rot.rotate(normal)
    n_local = Vec3(n_local.x * sc.x, n_local.y * sc.y, n_local.z * sc.z)
    if n_local.norm() == 0:
        return None
    n_local = n_local.normalized()

    lo, hi = volume.min_corner, volume.max_corner
    diag = (hi - lo).norm()
    if diag == 0:
        return None
    # big quad on the plane, then clip by the six box half-spaces
    axis = Vec3(1, 0, 0) if abs(n_local.x) < 0.9 else Vec3(0, 1, 0)
    u = n_local.cross(axis).normalized()
    v = n_local.cross(u)
    r = diag * 4.0
    mid = Vec3((lo.x + hi.x) / 2, (lo.y + hi.y) / 2, (lo.z + hi.z) / 2)
    d0 = (mid - p_local).dot(n_local)
    base = mid - n_local.scaled(d0)  # plane point nearest the box center
    poly = [
        base + u.scaled(r) + v.scaled(r),
        base - u.scaled(r) + v.scaled(r),
        base - u.scaled(r) - v.scaled(r),
        base + u.scaled(r) - v.scaled(r),
    ]
    halfspaces = [
        (Vec3(1, 0, 0), lo.x),
        (Vec3(-1, 0, 0), -hi.x),
        (Vec3(0, 1, 0), lo.y),
        (Vec3(0, -1, 0), -hi.y),
        (Vec3(0, 0, 1), lo.z),
        (Vec3(0, 0, -1), -hi.z),
    ]
    for n, bound in halfspaces:
        clipped: list[Vec3] = []
        for i, a in enumerate(poly):
            b = poly[(i + 1) % len(poly)]
            da = a.dot(n) - bound
            db = b.dot(n) - bound
            if da >= -1e-12:
                clipped.append(a)
            if (da > 1e-12 and db < -1e-12) or (da < -1e-12 and db > 1e-12):
                t = da / (da - db)
                clipped.append(a + (b - a).scaled(t))
        poly = clipped
        if len(poly) < 3:
            return None
    world_poly = [
        volume.pose.position + volume.pose.rotation.rotate(sc.hadamard(p)) for p in poly
    ]
    return center, normal, world_poly


def roll_from_screen_up(device: DeviceRecord) -> float:
    """Angle in radians between the screen's up vector and world up."""
    up = device.pose.rotation.rotate(Vec3(0.0, 1.0, 0.0))
    d = max(-1.0, min(1.0, up.dot(Vec3(0.0, 1.0, 0.0))))
    return math.acos(d)


def flick_release(
    element: ContentElement,
    release_velocity: tuple[float, float],
    device: DeviceRecord,
    config: EngineConfig = EngineConfig(),
) -> Optional[Vec3]:
    """Shared-space landing point for a flicked element, or None if it stays.

    The element leaves through the screen edge along the flick direction and
    lands a fixed offset beyond it.
    """
    if element.owner_device != device.device_id:
        raise EngineError(
            f"element {element.element_id} is not owned by {device.device_id}"
        )
    vx, vy = release_velocity
    speed = math.hypot(vx, vy)
    if speed < config.flick_speed_mps:
        return None
    dx, dy = vx / speed, vy / speed
    pos = element.attributes.get("position", [0.0, 0.0])
    px, py = float(pos[0]), float(pos[1])
    hw = device.extents.width * device.pose.scale.x / 2.0
    hh = device.extents.height * device.pose.scale.y / 2.0
    t_exit = math.inf
    if dx > 0:
        t_exit = min(t_exit, (hw - px) / dx)
    elif dx < 0:
        t_exit = min(t_exit, (-hw - px) / dx)
    if dy > 0:
        t_exit = min(t_exit, (hh - py) / dy)
    elif dy < 0:
        t_exit = min(t_exit, (-hh - py) / dy)
    t_exit = max(0.0, t_exit if math.isfinite(t_exit) else 0.0)
    fx = px + dx * (t_exit + config.flick_offset_m)
    fy = py + dy * (t_exit + config.flick_offset_m)
    return extended_local_to_shared(device, (fx, fy))


def record_snapshot(
    device_id: str,
    state: SessionState,
    snapshot_id: str,
    config: EngineConfig = EngineConfig(),
) -> SnapshotRecord:
    """Deep-copy the device's elements; the record is placed stack-style
    behind the device's current pose."""
    device = state.devices.get(device_id)
    if device is None:
        raise EngineError(f"unknown device: {device_id}")
    captured = {
        e.element_id: ContentElement(
            element_id=e.element_id,
            owner_device=e.owner_device,
            attributes=dict(e.attributes),
            attribute_seqs=dict(e.attribute_seqs),
        )
        for e in state.elements.values()
        if e.owner_device == device_id
    }
    depth = sum(1 for s in state.snapshots if s.source_device == device_id) + 1
    display_pose = compose_pose(
        device.pose, Pose.from_translation(0, 0, depth * config.stack_pitch_m)
    )
    return SnapshotRecord(
        snapshot_id=snapshot_id,
        source_device=device_id,
        elements=captured,
        display_pose=display_pose,
    )


def revert_candidate(
    device_pose: Pose,
    snapshots: list[SnapshotRecord],
    threshold_m: float = 0.05,
) -> Optional[str]:
    """Snapshot the device currently overlaps: nearest within the threshold,
    ties resolved toward the most recently recorded."""
    best: Optional[tuple[float, int, str]] = None
    for idx, snap in enumerate(snapshots):
        d = (device_pose.position - snap.display_pose.position).norm()
        if d >= threshold_m:
            continue
        # later index wins ties: compare (distance, -index)
        key = (d, -idx)
        if best is None or key < (best[0], best[1]):
            best = (d, -idx, snap.snapshot_id)
    return best[2] if best else None


def links_for_view(
    device: DeviceRecord, state: SessionState
) -> list[tuple[Link, tuple[float, float], Vec3]]:
    """Links whose source element currently projects inside this screen,
    with the on-screen source position and the unit direction to the target."""
    out = []
    for link in state.links:
        src = state.elements.get(link.source)
        if src is None:
            continue
        src_shared = element_shared_position(src, state)
        if src_shared is None:
            continue
        local = extended_shared_to_local(device, src_shared)
        if local is None:
            continue
        target_pos: Optional[Vec3] = None
        if link.target in state.devices:
            target_pos = state.devices[link.target].pose.position
        elif link.target in state.elements:
            target_pos = element_shared_position(state.elements[link.target], state)
        direction = Vec3()
        if target_pos is not None:
            delta = target_pos - src_shared
            if delta.norm() > 0:
                direction = delta.normalized()
        out.append((link, local, direction))
    return out


def element_shared_position(el: ContentElement, state: SessionState) -> Optional[Vec3]:
    """Shared-space position of an element: 3D attribute directly, 2D screen
    coordinates mapped through the owner device's plane."""
    pos = el.attributes.get("position")
    if not isinstance(pos, (list, tuple)):
        return None
    try:
        if len(pos) == 3:
            return Vec3(float(pos[0]), float(pos[1]), float(pos[2]))
        if len(pos) == 2:
            owner = state.devices.get(el.owner_device)
            if owner is None:
                return None
            return extended_local_to_shared(owner, (float(pos[0]), float(pos[1])))
    except (TypeError, ValueError, GeometryError):
        return None
    return None


def hand_world_position(frame: HandFrame) -> Vec3:
    """World position of a relayed hand: root bone position scaled
    componentwise by the frame's root scale."""
    root = frame.root_position()
    return root.hadamard(frame.root_scale)


# ---------------------------------------------------------------------------
# The tick-driven engine


@dataclass
class _PairState:
    prev_gap: Optional[float] = None
    refractory_until: float = -math.inf


class InteractionEngine:
    """Holds all detector state; one instance per session, single-threaded."""

    def __init__(self, config: EngineConfig = EngineConfig()):
        self.config = config
        self.time_s = 0.0
        self._bump_pairs: dict[tuple[str, str], _PairState] = {}
        self._prev_positions: dict[str, Vec3] = {}
        self._possession: dict[str, PossessionFSM] = {}  # keyed by local device
        self.possessed: dict[str, str] = {}  # local -> target
        self.snap_bindings: dict[str, SnapBinding] = {}  # keyed by anchor
        self._snap_dwell: dict[tuple[str, str], float] = {}
        self._pour_dwell: dict[tuple[str, str], float] = {}
        self._pour_refractory: dict[tuple[str, str], float] = {}
        self._proxemic_levels: dict[tuple[str, str], int] = {}
        self._revert_dwell: dict[tuple[str, str], float] = {}
        self._revert_refractory: dict[str, float] = {}
        self._copy_counter = 0

    # -- helpers

    def _next_copy_id(self, base: str) -> str:
        self._copy_counter += 1
        return f"{base}.copy{self._copy_counter}"

    def _copy_elements_to(
        self, state: SessionState, source_device: str, receivers: list[str]
    ) -> tuple[list[ContentUpsert], list[str]]:
        writes: list[ContentUpsert] = []
        copied: list[str] = []
        for eid in sorted(state.elements):
            el = state.elements[eid]
            if el.owner_device != source_device:
                continue
            for receiver in receivers:
                new_id = self._next_copy_id(eid)
                attrs = {k: v for k, v in el.attributes.items() if k != "__owner"}
                writes.append(
                    ContentUpsert(element_id=new_id, attributes=attrs, owner_device=receiver)
                )
                copied.append(new_id)
        return writes, copied

    def _event(self, kind: str, participants: tuple[str, ...], payload: dict | None = None
               ) -> InteractionEvent:
        return InteractionEvent(
            kind=kind,
            participants=participants,
            payload=payload or {},
            tick_time_s=self.time_s,
        )

    @staticmethod
    def _receivers(state: SessionState, receiver: str) -> list[str]:
        """A bump or pour into a grouped device fans out to the whole group."""
        for members in state.groups.values():
            if receiver in members:
                return sorted(members)
        return [receiver]

    # -- tick

    def tick(
        self, state: SessionState, dt: float
    ) -> tuple[list[InteractionEvent], list[PoseUpdate | ContentUpsert]]:
        if dt <= 0:
            raise EngineError("dt must be positive")
        self.time_s += dt
        events: list[InteractionEvent] = []
        writes: list[PoseUpdate | ContentUpsert] = []
        device_ids = sorted(state.devices)

        self._tick_bump(state, device_ids, dt, events, writes)
        self._tick_possession(state, device_ids, dt, events)
        self._tick_snap(state, device_ids, dt, events, writes)
        self._tick_pour(state, device_ids, dt, events, writes)
        self._tick_proxemics(state, device_ids, events)
        self._tick_revert(state, device_ids, dt, events, writes)

        for did in device_ids:
            self._prev_positions[did] = state.devices[did].pose.position
        return events, writes

    def _tick_bump(self, state, device_ids, dt, events, writes) -> None:
        cfg = self.config
        for i, a_id in enumerate(device_ids):
            for b_id in device_ids[i + 1 :]:
                a, b = state.devices[a_id], state.devices[b_id]
                pair = (a_id, b_id)
                ps = self._bump_pairs.setdefault(pair, _PairState())
                gap = screen_gap(a, b)
                prev = ps.prev_gap
                ps.prev_gap = gap
                if prev is None:
                    continue
                speed = (prev - gap) / dt  # positive while closing
                if (
                    gap <= cfg.bump_gap_m
                    and speed >= cfg.bump_speed_mps
                    and self.time_s >= ps.refractory_until
                ):
                    ps.refractory_until = self.time_s + cfg.bump_refractory_s
                    initiator, receiver = self._bump_initiator(state, a_id, b_id)
                    receivers = self._receivers(state, receiver)
                    copy_writes, copied = self._copy_elements_to(
                        state, initiator, receivers
                    )
                    writes.extend(copy_writes)
                    events.append(
                        self._event(
                            "bump", (initiator, receiver), {"copied": copied}
                        )
                    )

    def _bump_initiator(
        self, state: SessionState, a_id: str, b_id: str
    ) -> tuple[str, str]:
        """The device that moved more over the last tick initiated the bump;
        ties go to the lower device id."""
        moved = {}
        for did in (a_id, b_id):
            prev = self._prev_positions.get(did)
            cur = state.devices[did].pose.position
            moved[did] = (cur - prev).norm() if prev is not None else 0.0
        if moved[b_id] > moved[a_id]:
            return b_id, a_id
        return a_id, b_id

    def _tick_possession(self, state, device_ids, dt, events) -> None:
        cfg = self.config
        possessed_targets = set(self.possessed.values())
        for local_id in device_ids:
            local = state.devices[local_id]
            if local.presence != Presence.LOCAL_PHYSICAL:
                continue
            if local_id in self.possessed:
                continue
            # nearest holographic candidate; ties break toward lowest id
            candidate: Optional[tuple[float, str]] = None
            for other_id in device_ids:
                if other_id == local_id:
                    continue
                other = state.devices[other_id]
                if other.presence != Presence.REMOTE_HOLOGRAPHIC:
                    continue
                if other_id in possessed_targets:
                    continue
                d = (local.pose.position - other.pose.position).norm()
                if candidate is None or (d, other_id) < candidate:
                    candidate = (d, other_id)
            fsm = self._possession.get(local_id)
            if candidate is None:
                if fsm is not None:
                    self._possession.pop(local_id, None)
                continue
            dist, target_id = candidate
            if fsm is None or fsm.target_device != target_id:
                fsm = PossessionFSM(
                    local_device=local_id,
                    target_device=target_id,
                    d_threshold=cfg.possession_distance_m,
                    t_hold=cfg.possession_hold_s,
                )
            fsm, fired = update_possession(fsm, dist, dt)
            self._possession[local_id] = fsm
            if fired:
                self.possessed[local_id] = target_id
                possessed_targets.add(target_id)
                events.append(
                    self._event("possession_granted", (local_id, target_id))
                )

    def release_possession(self, device_id: str) -> Optional[InteractionEvent]:
        """Handle possess_release: either side of the pair may end it."""
        for local, target in list(self.possessed.items()):
            if device_id in (local, target):
                del self.possessed[local]
                self._possession.pop(local, None)
                return self._event("possession_released", (local, target))
        return None

    def _tick_snap(self, state, device_ids, dt, events, writes) -> None:
        cfg = self.config
        if cfg.snap_auto_attach:
            snapped = {b.snapped_device for b in self.snap_bindings.values()}
            for anchor_id in device_ids:
                anchor = state.devices[anchor_id]
                if anchor.presence != Presence.LOCAL_PHYSICAL:
                    continue
                for target_id in device_ids:
                    if target_id == anchor_id or target_id in snapped:
                        continue
                    target = state.devices[target_id]
                    if target.presence != Presence.REMOTE_HOLOGRAPHIC:
                        continue
                    d = (anchor.pose.position - target.pose.position).norm()
                    key = (anchor_id, target_id)
                    if d < cfg.snap_attach_distance_m:
                        dwell = self._snap_dwell.get(key, 0.0) + dt
                        self._snap_dwell[key] = dwell
                        if dwell >= cfg.snap_attach_dwell_s:
                            current = self.snap_bindings.get(anchor_id)
                            if current is None or current.snapped_device != target_id:
                                ev, restore = self.attach_snap(state, anchor_id, target_id)
                                if restore is not None:
                                    writes.append(restore[0])
                                    events.append(restore[1])
                                events.append(ev)
                            self._snap_dwell[key] = 0.0
                    else:
                        self._snap_dwell.pop(key, None)
        # follow: bound targets track their anchor rigidly
        for anchor_id in sorted(self.snap_bindings):
            binding = self.snap_bindings[anchor_id]
            anchor = state.devices.get(anchor_id)
            target = state.devices.get(binding.snapped_device)
            if anchor is None or target is None:
                del self.snap_bindings[anchor_id]
                continue
            desired = compose_pose(anchor.pose, binding.relative)
            if target.pose != desired:
                writes.append(PoseUpdate(device_id=binding.snapped_device, pose=desired))

    def attach_snap(
        self, state: SessionState, anchor_id: str, target_id: str
    ) -> tuple[InteractionEvent, Optional[tuple[PoseUpdate, InteractionEvent]]]:
        """Bind target to anchor; returns the attach event and, when a prior
        binding existed, the restore write plus its release event."""
        if anchor_id == target_id:
            raise EngineError("cannot snap a device to itself")
        anchor = state.devices.get(anchor_id)
        target = state.devices.get(target_id)
        if anchor is None or target is None:
            raise EngineError("snap endpoints must exist")
        if target.presence != Presence.REMOTE_HOLOGRAPHIC:
            raise EngineError("only holographic devices can be snapped")
        restore = None
        previous = self.snap_bindings.get(anchor_id)
        if previous is not None:
            restore = (
                PoseUpdate(
                    device_id=previous.snapped_device, pose=previous.original_pose
                ),
                self._event(
                    "snap_released", (anchor_id, previous.snapped_device)
                ),
            )
        self.snap_bindings[anchor_id] = SnapBinding(
            anchor_device=anchor_id,
            snapped_device=target_id,
            relative=relative_pose(anchor.pose, target.pose),
            original_pose=target.pose,
        )
        return self._event("snap_attached", (anchor_id, target_id)), restore

    def release_snap(
        self, anchor_id: str
    ) -> Optional[tuple[PoseUpdate, InteractionEvent]]:
        binding = self.snap_bindings.pop(anchor_id, None)
        if binding is None:
            return None
        return (
            PoseUpdate(device_id=binding.snapped_device, pose=binding.original_pose),
            self._event("snap_released", (anchor_id, binding.snapped_device)),
        )

    def _tick_pour(self, state, device_ids, dt, events, writes) -> None:
        cfg = self.config
        roll_limit = math.radians(cfg.pour_roll_deg)
        for a_id in device_ids:
            a = state.devices[a_id]
            for b_id in device_ids:
                if b_id == a_id:
                    continue
                b = state.devices[b_id]
                key = (a_id, b_id)
                dx = a.pose.position.x - b.pose.position.x
                dz = a.pose.position.z - b.pose.position.z
                horizontal = math.hypot(dx, dz)
                above = a.pose.position.y > b.pose.position.y
                rolled = roll_from_screen_up(a) > roll_limit
                if above and horizontal <= cfg.pour_radius_m and rolled:
                    dwell = self._pour_dwell.get(key, 0.0) + dt
                    self._pour_dwell[key] = dwell
                    if (
                        dwell >= cfg.pour_dwell_s
                        and self.time_s >= self._pour_refractory.get(key, -math.inf)
                    ):
                        self._pour_refractory[key] = self.time_s + cfg.pour_refractory_s
                        self._pour_dwell[key] = 0.0
                        receivers = self._receivers(state, b_id)
                        copy_writes, copied = self._copy_elements_to(
                            state, a_id, receivers
                        )
                        writes.extend(copy_writes)
                        events.append(
                            self._event("pour", (a_id, b_id), {"copied": copied})
                        )
                else:
                    self._pour_dwell.pop(key, None)

    def _tick_proxemics(self, state, device_ids, events) -> None:
        cfg = self.config
        zones = cfg.proxemic_zones
        for i, a_id in enumerate(device_ids):
            for b_id in device_ids[i + 1 :]:
                pair = (a_id, b_id)
                d = (
                    state.devices[a_id].pose.position
                    - state.devices[b_id].pose.position
                ).norm()
                raw = proxemic_level(d, zones)
                current = self._proxemic_levels.get(pair)
                if current is None:
                    self._proxemic_levels[pair] = raw
                    continue
                if raw > current:
                    # rising: must clear the crossed threshold by the margin
                    if d >= zones[current] * (1.0 + cfg.proxemic_hysteresis):
                        self._proxemic_levels[pair] = raw
                        events.append(
                            self._event(
                                "proxemic_changed",
                                pair,
                                {"level": raw, "previous": current},
                            )
                        )
                elif raw < current:
                    if d < zones[current - 1] * (1.0 - cfg.proxemic_hysteresis):
                        self._proxemic_levels[pair] = raw
                        events.append(
                            self._event(
                                "proxemic_changed",
                                pair,
                                {"level": raw, "previous": current},
                            )
                        )

    def _tick_revert(self, state, device_ids, dt, events, writes) -> None:
        cfg = self.config
        if not state.snapshots:
            return
        for did in device_ids:
            dev = state.devices[did]
            if dev.presence != Presence.LOCAL_PHYSICAL:
                continue
            if self.time_s < self._revert_refractory.get(did, -math.inf):
                continue
            sid = revert_candidate(dev.pose, state.snapshots, cfg.revert_distance_m)
            if sid is None:
                for key in [k for k in self._revert_dwell if k[0] == did]:
                    del self._revert_dwell[key]
                continue
            key = (did, sid)
            dwell = self._revert_dwell.get(key, 0.0) + dt
            self._revert_dwell[key] = dwell
            if dwell >= cfg.revert_hold_s:
                self._revert_dwell[key] = 0.0
                self._revert_refractory[did] = self.time_s + cfg.revert_hold_s
                ev, restore_writes = self.apply_revert(state, did, sid)
                writes.extend(restore_writes)
                events.append(ev)

    def apply_revert(
        self, state: SessionState, device_id: str, snapshot_id: str
    ) -> tuple[InteractionEvent, list[ContentUpsert]]:
        snap = next(
            (s for s in state.snapshots if s.snapshot_id == snapshot_id), None
        )
        if snap is None:
            raise EngineError(f"unknown snapshot: {snapshot_id}")
        writes = [
            ContentUpsert(
                element_id=eid,
                attributes={
                    k: v for k, v in el.attributes.items() if k != "__owner"
                },
                owner_device=el.owner_device,
            )
            for eid, el in sorted(snap.elements.items())
        ]
        return (
            self._event(
                "snapshot_reverted", (device_id, snap.source_device), {"snapshot_id": snapshot_id}
            ),
            writes,
        )

    # -- commands

    def handle_command(
        self, state: SessionState, sender: str, cmd: Command, seq: int
    ) -> tuple[list[InteractionEvent], list[PoseUpdate | ContentUpsert]]:
        """Execute a sequenced command against the current state.

        group_create and link_create already mutated the state via the
        replica rule; this only adds their events.
        """
        events: list[InteractionEvent] = []
        writes: list[PoseUpdate | ContentUpsert] = []
        name, params = cmd.name, cmd.params

        if name == "snap_attach":
            ev, restore = self.attach_snap(state, sender, str(params["target"]))
            if restore is not None:
                writes.append(restore[0])
                events.append(restore[1])
            events.append(ev)
        elif name == "snap_release":
            released = self.release_snap(sender)
            if released is not None:
                writes.append(released[0])
                events.append(released[1])
        elif name == "possess_release":
            ev = self.release_possession(sender)
            if ev is not None:
                events.append(ev)
        elif name == "align":
            layout = str(params.get("layout", "line"))
            values = params.get("values", {})
            devices = list(state.devices.values())
            origin = Pose()
            if "origin" in params:
                from .protocol import pose_from_json

                origin = pose_from_json(params["origin"])
            targets = align_devices(
                devices,
                lambda d: (str(values.get(d.device_id, "")), d.device_id),
                layout,
                origin=origin,
                config=self.config,
            )
            for did in sorted(targets):
                writes.append(PoseUpdate(device_id=did, pose=targets[did]))
            events.append(
                self._event(
                    "align_applied", tuple(sorted(targets)), {"layout": layout}
                )
            )
        elif name == "group_create":
            ids = sorted(str(i) for i in params.get("ids", []))
            missing = [i for i in ids if i not in state.devices]
            if missing:
                raise EngineError(f"unknown devices in group: {missing}")
            events.append(
                self._event("group_created", tuple(ids), {"group_id": f"g{seq}"})
            )
        elif name == "group_move":
            gid = str(params["group_id"])
            members = state.groups.get(gid)
            if members is None:
                raise EngineError(f"unknown group: {gid}")
            from .protocol import pose_from_json

            delta = pose_from_json(params["delta"])
            for did in sorted(members):
                dev = state.devices.get(did)
                if dev is None or dev.presence != Presence.REMOTE_HOLOGRAPHIC:
                    continue
                writes.append(
                    PoseUpdate(device_id=did, pose=compose_pose(delta, dev.pose))
                )
            events.append(
                self._event("group_moved", tuple(sorted(members)), {"group_id": gid})
            )
        elif name == "pour":
            target = str(params["target"])
            if target not in state.devices:
                raise EngineError(f"unknown device: {target}")
            receivers = self._receivers(state, target)
            copy_writes, copied = self._copy_elements_to(state, sender, receivers)
            writes.extend(copy_writes)
            events.append(self._event("pour", (sender, target), {"copied": copied}))
        elif name == "record_snapshot":
            sid = f"s{seq}"
            snap = record_snapshot(sender, state, sid, self.config)
            state.snapshots.append(snap)
            events.append(
                self._event("snapshot_recorded", (sender,), {"snapshot_id": sid})
            )
        elif name == "revert":
            ev, restore_writes = self.apply_revert(
                state, sender, str(params["snapshot_id"])
            )
            writes.extend(restore_writes)
            events.append(ev)
        elif name == "link_create":
            source = str(params["source"])
            target = str(params["target"])
            if source not in state.elements:
                raise EngineError(f"unknown source element: {source}")
            if target not in state.elements and target not in state.devices:
                raise EngineError(f"unknown link target: {target}")
            events.append(
                self._event(
                    "link_created", (source, target), {"link_id": f"l{seq}"}
                )
            )
        else:
            raise EngineError(f"unhandled command: {name}")
        return events, writes
