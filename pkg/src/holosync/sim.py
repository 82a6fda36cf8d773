"""Deterministic scenario runner.

Scenarios are JSON documents: device descriptors, a timed action list, a
network model, and expectations over the resulting event log and state.
Everything runs on a virtual clock in fixed ticks against an in-process
SessionHub; a given (scenario, seed) pair reproduces the event log
byte-for-byte.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace as dc_replace
from pathlib import Path
from typing import Any, Optional

from .engine import (
    EngineConfig,
    extended_local_to_shared,
    extended_shared_to_local,
)
from .geometry import Pose, Quat, Vec3
from .hub import SessionHub, Subscriber
from .pointcloud import pack_points, synthetic_frame, depth_to_points
from .protocol import (
    Command,
    ContentUpsert,
    Envelope,
    InteractionEvent,
    Join,
    PoseUpdate,
    StreamFrameHeader,
    Welcome,
    decode_control,
    encode_stream_frame,
    pose_from_json,
    pose_to_json,
)
from .session import SessionState, apply_envelope_to_state, state_from_dict, state_hash

OBSERVER_ID = "__observer__"


class ScenarioError(Exception):
    pass


# ---------------------------------------------------------------------------
# Scenario model


@dataclass(frozen=True)
class NetworkModel:
    latency_kind: str = "fixed"  # fixed | uniform
    latency_lo_ms: float = 0.0
    latency_hi_ms: float = 0.0
    reorder: bool = False
    loss: float = 0.0  # stream frames only

    def latency_s(self, rng: random.Random) -> float:
        if self.latency_kind == "fixed":
            return self.latency_lo_ms / 1000.0
        return rng.uniform(self.latency_lo_ms, self.latency_hi_ms) / 1000.0


@dataclass
class DeviceSpec:
    name: str
    kind: str = "phone"
    extents: tuple[float, float] = (0.07, 0.15)
    presence: str = "remote_holographic"
    pose: Pose = field(default_factory=Pose)


@dataclass
class TimedAction:
    t: float
    action: str
    params: dict


@dataclass
class Scenario:
    name: str
    devices: list[DeviceSpec]
    elements: list[dict]
    timeline: list[TimedAction]
    expectations: list[dict]
    network: NetworkModel = NetworkModel()
    seed: int = 0
    tick_rate_hz: float = 60.0
    duration_s: float = 5.0
    engine_overrides: dict = field(default_factory=dict)


_ACTIONS = {
    "move_linear",
    "hold",
    "set_attribute",
    "remove_element",
    "command",
    "inject_stream",
    "transfer_element",
}


def scenario_from_dict(doc: dict, where: str = "<scenario>") -> Scenario:
    def fail(msg: str) -> ScenarioError:
        return ScenarioError(f"{where}: {msg}")

    if not isinstance(doc, dict) or "name" not in doc:
        raise fail("scenario must be an object with a name")
    devices = []
    names = set()
    for i, d in enumerate(doc.get("devices", [])):
        try:
            spec = DeviceSpec(
                name=str(d["name"]),
                kind=str(d.get("kind", "phone")),
                extents=(float(d["extents"][0]), float(d["extents"][1]))
                if "extents" in d
                else (0.07, 0.15),
                presence=str(d.get("presence", "remote_holographic")),
                pose=pose_from_json(d["pose"]) if "pose" in d else Pose(),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise fail(f"devices[{i}]: {exc}")
        if spec.name in names:
            raise fail(f"devices[{i}]: duplicate name {spec.name!r}")
        names.add(spec.name)
        devices.append(spec)
    elements = []
    for i, e in enumerate(doc.get("elements", [])):
        if "element_id" not in e:
            raise fail(f"elements[{i}]: missing element_id")
        owner = e.get("owner")
        if owner is not None and owner not in names:
            raise fail(f"elements[{i}]: undeclared owner {owner!r}")
        elements.append(e)
    timeline = []
    last_t = -math.inf
    for i, a in enumerate(doc.get("timeline", [])):
        try:
            t = float(a["t"])
            action = str(a["action"])
        except (KeyError, TypeError, ValueError) as exc:
            raise fail(f"timeline[{i}]: {exc}")
        if t < last_t:
            raise fail(f"timeline[{i}]: times must be non-decreasing")
        last_t = t
        if action not in _ACTIONS:
            raise fail(f"timeline[{i}]: unknown action {action!r}")
        dev = a.get("device")
        if dev is not None and dev not in names:
            raise fail(f"timeline[{i}]: undeclared device {dev!r}")
        if action == "transfer_element" and a.get("to_device") not in names:
            raise fail(f"timeline[{i}]: undeclared device {a.get('to_device')!r}")
        timeline.append(TimedAction(t=t, action=action, params=dict(a)))
    net = doc.get("network", {})
    lat = net.get("latency", {"kind": "fixed", "ms": 0})
    if lat.get("kind", "fixed") == "fixed":
        model = NetworkModel(
            latency_kind="fixed",
            latency_lo_ms=float(lat.get("ms", 0.0)),
            latency_hi_ms=float(lat.get("ms", 0.0)),
            reorder=bool(net.get("reorder", False)),
            loss=float(net.get("loss", 0.0)),
        )
    else:
        model = NetworkModel(
            latency_kind="uniform",
            latency_lo_ms=float(lat["lo_ms"]),
            latency_hi_ms=float(lat["hi_ms"]),
            reorder=bool(net.get("reorder", False)),
            loss=float(net.get("loss", 0.0)),
        )
    return Scenario(
        name=str(doc["name"]),
        devices=devices,
        elements=elements,
        timeline=timeline,
        expectations=list(doc.get("expectations", [])),
        network=model,
        seed=int(doc.get("seed", 0)),
        tick_rate_hz=float(doc.get("tick_rate_hz", 60.0)),
        duration_s=float(doc.get("duration_s", 5.0)),
        engine_overrides=dict(doc.get("engine", {})),
    )


def load_scenario(source: str | Path) -> Scenario:
    path = Path(source)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    return scenario_from_dict(doc, where=str(path))


BUNDLED_DIR = Path(__file__).parent / "scenarios"


def bundled_scenario_path(name: str) -> Path:
    return BUNDLED_DIR / f"{name}.json"


# ---------------------------------------------------------------------------
# Runner


@dataclass
class _Motion:
    device: str
    start_t: float
    duration: float
    from_pose: Optional[Pose]
    to_pose: Pose
    rate_hz: Optional[float] = None
    last_sent_t: float = -math.inf
    resolved_from: Optional[Pose] = None

    def pose_at(self, t: float) -> Pose:
        assert self.resolved_from is not None
        if self.duration <= 0:
            return self.to_pose
        frac = max(0.0, min(1.0, (t - self.start_t) / self.duration))
        a, b = self.resolved_from, self.to_pose
        pos = Vec3(
            a.position.x + (b.position.x - a.position.x) * frac,
            a.position.y + (b.position.y - a.position.y) * frac,
            a.position.z + (b.position.z - a.position.z) * frac,
        )
        rot = a.rotation.slerp(b.rotation, frac)
        scale = Vec3(
            a.scale.x + (b.scale.x - a.scale.x) * frac,
            a.scale.y + (b.scale.y - a.scale.y) * frac,
            a.scale.z + (b.scale.z - a.scale.z) * frac,
        )
        return Pose(position=pos, rotation=rot, scale=scale)


@dataclass
class _Replica:
    device_id: str
    state: SessionState
    pending: list[tuple[float, int, bytes]] = field(default_factory=list)
    last_delivery_t: float = -math.inf
    latencies_s: list[float] = field(default_factory=list)
    stream_frames: int = 0


@dataclass
class RunResult:
    scenario: Scenario
    event_log: list[bytes]  # broadcast event envelopes, in seq order
    events: list[InteractionEvent]
    hub: SessionHub
    replicas: dict[str, _Replica]
    name_to_id: dict[str, str]
    control_latencies_s: list[float]

    def final_state(self) -> SessionState:
        return self.hub.state

    def event_times(self, kind: str) -> list[float]:
        return [e.tick_time_s for e in self.events if e.kind == kind]


def run_scenario(scenario: Scenario) -> RunResult:
    rng = random.Random(scenario.seed)
    dt = 1.0 / scenario.tick_rate_hz
    clock = {"t": 0.0}
    engine_config = EngineConfig(**scenario.engine_overrides)
    hub = SessionHub(
        session_id=scenario.name,
        engine_config=engine_config,
        clock_ms=lambda: int(round(clock["t"] * 1000.0)),
    )
    # observer taps the broadcast channel for the event log and seq checks
    hub.subscribers[OBSERVER_ID] = Subscriber(device_id=OBSERVER_ID)
    observer = hub.subscribers[OBSERVER_ID]

    name_to_id: dict[str, str] = {}
    replicas: dict[str, _Replica] = {}
    for spec in scenario.devices:
        device_id, welcome = hub.join(
            Join(
                kind=spec.kind,
                width=spec.extents[0],
                height=spec.extents[1],
                presence=spec.presence,
            )
        )
        name_to_id[spec.name] = device_id
        replicas[spec.name] = _Replica(
            device_id=device_id, state=state_from_dict(welcome.payload.state)
        )
        hub.subscribers[device_id].control.clear()  # welcome consumed
        hub.apply_update(device_id, PoseUpdate(device_id=device_id, pose=spec.pose))
    for el in scenario.elements:
        owner_name = el.get("owner")
        owner_id = name_to_id[owner_name] if owner_name else None
        sender = owner_id or name_to_id[scenario.devices[0].name]
        hub.apply_update(
            sender,
            ContentUpsert(
                element_id=str(el["element_id"]),
                attributes=dict(el.get("attrs", {})),
                owner_device=owner_id,
            ),
        )

    motions: list[_Motion] = []
    stream_jobs: list[dict] = []
    pending_actions = list(scenario.timeline)
    event_log: list[bytes] = []
    events: list[InteractionEvent] = []
    last_seq_seen = 0

    def run_action(act: TimedAction, t: float) -> None:
        p = act.params
        if act.action == "hold":
            return
        if act.action == "move_linear":
            motions.append(
                _Motion(
                    device=str(p["device"]),
                    start_t=act.t,
                    duration=float(p.get("duration", 0.0)),
                    from_pose=pose_from_json(p["from"]) if "from" in p else None,
                    to_pose=pose_from_json(p["to"]),
                    rate_hz=float(p["rate_hz"]) if "rate_hz" in p else None,
                )
            )
            return
        if act.action == "set_attribute":
            sender = name_to_id[str(p["device"])]
            hub.apply_update(
                sender,
                ContentUpsert(
                    element_id=str(p["element"]),
                    attributes={str(p["name"]): p["value"]},
                ),
            )
            return
        if act.action == "remove_element":
            from .protocol import ContentRemove

            sender = name_to_id[str(p["device"])]
            hub.apply_update(sender, ContentRemove(element_id=str(p["element"])))
            return
        if act.action == "command":
            sender = name_to_id[str(p["device"])]
            params = dict(p.get("params", {}))
            # device names in params resolve to assigned ids
            for key in ("target", "group_id"):
                if key in params and params[key] in name_to_id:
                    params[key] = name_to_id[params[key]]
            if "ids" in params:
                params["ids"] = [name_to_id.get(i, i) for i in params["ids"]]
            if "values" in params:
                params["values"] = {
                    name_to_id.get(k, k): v for k, v in params["values"].items()
                }
            hub.apply_update(sender, Command(name=str(p["name"]), params=params))
            return
        if act.action == "transfer_element":
            # convert the element's screen position through shared space onto
            # the destination screen, reassigning ownership
            sender = name_to_id[str(p["device"])]
            dest = name_to_id[str(p["to_device"])]
            el = hub.state.elements[str(p["element"])]
            pos = el.attributes.get("position", [0.0, 0.0])
            src_dev = hub.state.devices[sender]
            dst_dev = hub.state.devices[dest]
            shared = extended_local_to_shared(src_dev, (float(pos[0]), float(pos[1])))
            if "shared_offset" in p:
                off = p["shared_offset"]
                shared = shared + Vec3(float(off[0]), float(off[1]), float(off[2]))
            local = extended_shared_to_local(dst_dev, shared)
            if local is None:
                attrs: dict[str, Any] = {
                    "position": [shared.x, shared.y, shared.z]
                }
                hub.apply_update(
                    sender,
                    ContentUpsert(
                        element_id=el.element_id,
                        attributes=attrs,
                        owner_device="__shared__",
                    ),
                )
            else:
                hub.apply_update(
                    sender,
                    ContentUpsert(
                        element_id=el.element_id,
                        attributes={"position": [local[0], local[1]]},
                        owner_device=dest,
                    ),
                )
            return
        if act.action == "inject_stream":
            stream_jobs.append(
                {
                    "device": name_to_id[str(p["device"])],
                    "remaining": int(p.get("frames", 1)),
                    "interval_s": float(p.get("interval_ms", 33)) / 1000.0,
                    "next_t": act.t,
                    "pattern": str(p.get("pattern", "wall")),
                    "width": int(p.get("width", 64)),
                    "height": int(p.get("height", 48)),
                    "frame_id": 0,
                }
            )
            return

    def pump_streams(t: float) -> None:
        for job in stream_jobs:
            while job["remaining"] > 0 and job["next_t"] <= t + 1e-9:
                frame = synthetic_frame(
                    pattern=job["pattern"],
                    width=job["width"],
                    height=job["height"],
                    seed=scenario.seed + job["frame_id"],
                    timestamp_ms=int(round(job["next_t"] * 1000)),
                )
                cloud = depth_to_points(frame, frame_id=job["frame_id"])
                packed = pack_points(cloud)
                header = StreamFrameHeader(
                    stream_kind="pointcloud",
                    frame_id=job["frame_id"],
                    count=len(cloud),
                )
                hub.relay_stream(
                    job["device"], encode_stream_frame(header, packed), now_s=t
                )
                job["frame_id"] += 1
                job["remaining"] -= 1
                job["next_t"] += job["interval_s"]

    def drain_observer() -> None:
        nonlocal last_seq_seen
        while observer.control:
            raw = observer.control.popleft()
            env = decode_control(raw)
            if env.seq != last_seq_seen + 1:
                raise ScenarioError(
                    f"sequence gap: saw {env.seq} after {last_seq_seen}"
                )
            last_seq_seen = env.seq
            if isinstance(env.payload, InteractionEvent):
                event_log.append(raw)
                events.append(env.payload)

    def schedule_deliveries(t: float) -> None:
        for name, rep in replicas.items():
            sub = hub.subscribers.get(rep.device_id)
            if sub is None:
                continue
            while sub.control:
                raw = sub.control.popleft()
                env = decode_control(raw)
                sent = env.timestamp_ms / 1000.0
                due = sent + scenario.network.latency_s(rng)
                if not scenario.network.reorder:
                    due = max(due, rep.last_delivery_t)
                    rep.last_delivery_t = due
                rep.latencies_s.append(due - sent)
                rep.pending.append((due, env.seq, raw))
            while sub.stream:
                frame = sub.stream.popleft()
                if rng.random() >= scenario.network.loss:
                    rep.stream_frames += 1

    def deliver_due(t: float) -> None:
        for rep in replicas.values():
            due_now = [x for x in rep.pending if x[0] <= t + 1e-9]
            if not due_now:
                continue
            rep.pending = [x for x in rep.pending if x[0] > t + 1e-9]
            for due, seq, raw in sorted(due_now, key=lambda x: (x[0], x[1])):
                apply_envelope_to_state(rep.state, decode_control(raw))

    ticks = int(round(scenario.duration_s * scenario.tick_rate_hz))
    t = 0.0
    for _ in range(ticks):
        t += dt
        clock["t"] = t
        while pending_actions and pending_actions[0].t <= t + 1e-9:
            run_action(pending_actions.pop(0), t)
        for motion in motions:
            dev_id = name_to_id[motion.device]
            if motion.resolved_from is None:
                motion.resolved_from = (
                    motion.from_pose
                    if motion.from_pose is not None
                    else hub.state.devices[dev_id].pose
                )
            if t > motion.start_t + motion.duration + dt:
                continue
            if motion.rate_hz and t - motion.last_sent_t < 1.0 / motion.rate_hz - 1e-9:
                continue
            motion.last_sent_t = t
            hub.apply_update(
                dev_id, PoseUpdate(device_id=dev_id, pose=motion.pose_at(t))
            )
        pump_streams(t)
        hub.tick(dt)
        drain_observer()
        schedule_deliveries(t)
        deliver_due(t)

    # quiesce: flush in-flight deliveries
    drain_observer()
    schedule_deliveries(t)
    horizon = t + 1.0 + scenario.network.latency_hi_ms / 1000.0
    deliver_due(horizon)

    latencies = [l for rep in replicas.values() for l in rep.latencies_s]
    return RunResult(
        scenario=scenario,
        event_log=event_log,
        events=events,
        hub=hub,
        replicas=replicas,
        name_to_id=name_to_id,
        control_latencies_s=latencies,
    )


# ---------------------------------------------------------------------------
# Expectations


@dataclass
class ExpectationResult:
    name: str
    passed: bool
    expected: str
    actual: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name} expected={self.expected} actual={self.actual}"


def assert_expectations(result: RunResult) -> list[ExpectationResult]:
    out: list[ExpectationResult] = []
    state = result.final_state()
    for exp in result.scenario.expectations:
        kind = exp["kind"]
        if kind == "event_count":
            times = result.event_times(str(exp["event"]))
            n = int(exp["n"])
            out.append(
                ExpectationResult(
                    name=f"event_count:{exp['event']}",
                    passed=len(times) == n,
                    expected=str(n),
                    actual=str(len(times)),
                )
            )
        elif kind == "event_within":
            times = result.event_times(str(exp["event"]))
            target = float(exp["t"])
            tol = float(exp.get("tol", 0.0))
            hit = any(abs(x - target) <= tol + 1e-9 for x in times)
            out.append(
                ExpectationResult(
                    name=f"event_within:{exp['event']}",
                    passed=hit,
                    expected=f"{target}+-{tol}",
                    actual=",".join(f"{x:.4f}" for x in times) or "none",
                )
            )
        elif kind == "no_event_before":
            times = result.event_times(str(exp["event"]))
            limit = float(exp["t"])
            early = [x for x in times if x < limit - 1e-9]
            out.append(
                ExpectationResult(
                    name=f"no_event_before:{exp['event']}",
                    passed=not early,
                    expected=f"none before {limit}",
                    actual=",".join(f"{x:.4f}" for x in early) or "none",
                )
            )
        elif kind == "state_equal":
            server = state_hash(state)
            mismatched = [
                name
                for name, rep in result.replicas.items()
                if state_hash(rep.state) != server
            ]
            out.append(
                ExpectationResult(
                    name="state_equal",
                    passed=not mismatched,
                    expected=server[:12],
                    actual="all match" if not mismatched else f"diverged: {mismatched}",
                )
            )
        elif kind == "pose_equal":
            dev_id = result.name_to_id[str(exp["device"])]
            actual_pose = state.devices[dev_id].pose
            want = pose_from_json(exp["pose"])
            tol = float(exp.get("tol", 0.0))
            if tol == 0.0:
                ok = actual_pose == want
            else:
                diff = max(
                    abs(a - b)
                    for a, b in zip(
                        actual_pose.position.as_tuple() + actual_pose.rotation.as_tuple(),
                        want.position.as_tuple() + want.rotation.as_tuple(),
                    )
                )
                ok = diff <= tol
            out.append(
                ExpectationResult(
                    name=f"pose_equal:{exp['device']}",
                    passed=ok,
                    expected=json.dumps(pose_to_json(want)),
                    actual=json.dumps(pose_to_json(actual_pose)),
                )
            )
        elif kind == "element_attr":
            el = state.elements.get(str(exp["element"]))
            want = exp["value"]
            tol = float(exp.get("tol", 0.0))
            if el is None:
                ok, actual = False, "<missing element>"
            else:
                got = el.attributes.get(str(exp["name"]))
                actual = json.dumps(got)
                if isinstance(want, list) and isinstance(got, list) and tol > 0:
                    ok = len(want) == len(got) and all(
                        abs(float(a) - float(b)) <= tol for a, b in zip(want, got)
                    )
                else:
                    ok = got == want
            out.append(
                ExpectationResult(
                    name=f"element_attr:{exp['element']}.{exp['name']}",
                    passed=ok,
                    expected=json.dumps(want),
                    actual=actual,
                )
            )
        elif kind == "element_count":
            owner = exp.get("owner")
            if owner is not None:
                owner = result.name_to_id.get(str(owner), str(owner))
                count = sum(
                    1 for e in state.elements.values() if e.owner_device == owner
                )
            else:
                count = len(state.elements)
            n = int(exp["n"])
            out.append(
                ExpectationResult(
                    name=f"element_count:{exp.get('owner', '*')}",
                    passed=count == n,
                    expected=str(n),
                    actual=str(count),
                )
            )
        else:
            out.append(
                ExpectationResult(
                    name=f"unknown:{kind}", passed=False, expected="known kind", actual=kind
                )
            )
    return out
