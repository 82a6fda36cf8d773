"""Authoritative session hub: sequencing, broadcast, stream relay, metrics.

Transport-agnostic and synchronous; the WebSocket server and the scenario
harness both drive it. All calls for one session must come from one logical
writer (the server wraps calls in a per-session lock).
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .engine import EngineConfig, EngineError, InteractionEngine
from .protocol import (
    Command,
    ContentRemove,
    ContentUpsert,
    Envelope,
    ErrorPayload,
    InteractionEvent,
    Join,
    Payload,
    PoseUpdate,
    Welcome,
    encode_control,
)
from .session import (
    SessionState,
    apply_envelope_to_state,
    load_session,
    save_session,
    state_hash,
    state_to_dict,
)

SERVER_SENDER = "__server__"
DEFAULT_STREAM_QUEUE_CAPACITY = 4


class HubError(Exception):
    pass


@dataclass
class Subscriber:
    device_id: str
    control: deque = field(default_factory=deque)  # unbounded, seq order
    stream: deque = field(default_factory=deque)  # bounded, drop-oldest
    wake: Optional[Callable[[], None]] = None

    def _notify(self) -> None:
        if self.wake is not None:
            self.wake()


@dataclass
class HubMetrics:
    messages_sequenced: int = 0
    frames_relayed: int = 0
    frames_dropped: int = 0
    stream_arrivals: dict[str, deque] = field(default_factory=dict)

    def record_stream(self, sender: str, now_s: float) -> None:
        window = self.stream_arrivals.setdefault(sender, deque())
        window.append(now_s)
        while window and window[0] < now_s - 1.0:
            window.popleft()

    def fps(self, sender: str) -> int:
        return len(self.stream_arrivals.get(sender, ()))


class SessionHub:
    def __init__(
        self,
        session_id: str,
        engine_config: EngineConfig = EngineConfig(),
        stream_queue_capacity: int = DEFAULT_STREAM_QUEUE_CAPACITY,
        clock_ms: Optional[Callable[[], int]] = None,
        state: Optional[SessionState] = None,
    ):
        self.state = state if state is not None else SessionState(session_id=session_id)
        self.engine = InteractionEngine(engine_config)
        self.subscribers: dict[str, Subscriber] = {}
        self.metrics = HubMetrics()
        self.stream_queue_capacity = stream_queue_capacity
        self._clock_ms = clock_ms or (lambda: int(time.time() * 1000))
        self._device_counter = sum(
            1 for d in self.state.devices if d.startswith("d")
        )

    @property
    def session_id(self) -> str:
        return self.state.session_id

    # -- membership

    def join(self, descriptor: Join) -> tuple[str, Envelope]:
        """Admit a device: broadcast its join, then hand it a consistent
        snapshot taken at a single seq."""
        self._device_counter += 1
        device_id = f"d{self._device_counter}"
        while device_id in self.state.devices:
            self._device_counter += 1
            device_id = f"d{self._device_counter}"
        join_env = self._stamp(device_id, descriptor)
        apply_envelope_to_state(self.state, join_env)
        self._broadcast(join_env)
        self.subscribers[device_id] = Subscriber(device_id=device_id)
        welcome = Envelope(
            payload=Welcome(device_id=device_id, state=state_to_dict(self.state)),
            sender=SERVER_SENDER,
            seq=0,
            timestamp_ms=self._clock_ms(),
        )
        self.subscribers[device_id].control.append(encode_control(welcome))
        self.subscribers[device_id]._notify()
        return device_id, welcome

    def leave(self, device_id: str) -> None:
        self.subscribers.pop(device_id, None)

    # -- sequencing

    def _stamp(self, sender: str, payload: Payload) -> Envelope:
        self.metrics.messages_sequenced += 1
        return Envelope(
            payload=payload,
            sender=sender,
            seq=self.state.seq + 1,
            timestamp_ms=self._clock_ms(),
        )

    def _broadcast(self, env: Envelope) -> None:
        data = encode_control(env)
        for sub in self.subscribers.values():
            sub.control.append(data)
            sub._notify()

    def _error_to(self, device_id: str, code: str, message: str) -> None:
        sub = self.subscribers.get(device_id)
        if sub is None:
            return
        env = Envelope(
            payload=ErrorPayload(code=code, message=message),
            sender=SERVER_SENDER,
            seq=0,
            timestamp_ms=self._clock_ms(),
        )
        sub.control.append(encode_control(env))
        sub._notify()

    def _validate(self, sender: str, payload: Payload) -> Optional[tuple[str, str]]:
        state = self.state
        if isinstance(payload, PoseUpdate):
            if payload.device_id not in state.devices:
                return "unknown_device", f"no such device: {payload.device_id}"
        elif isinstance(payload, ContentRemove):
            if payload.element_id not in state.elements:
                return "unknown_element", f"no such element: {payload.element_id}"
        elif isinstance(payload, Command):
            p = payload.params
            try:
                if payload.name == "snap_attach":
                    target = str(p["target"])
                    if target not in state.devices:
                        return "unknown_device", f"no such device: {target}"
                    if target == sender:
                        return "invalid_command", "cannot snap a device to itself"
                elif payload.name == "group_create":
                    missing = [
                        str(i) for i in p.get("ids", []) if str(i) not in state.devices
                    ]
                    if missing:
                        return "unknown_device", f"unknown devices: {missing}"
                    if not p.get("ids"):
                        return "invalid_command", "group must be nonempty"
                elif payload.name == "group_move":
                    if str(p.get("group_id")) not in state.groups:
                        return "unknown_group", f"no such group: {p.get('group_id')}"
                elif payload.name == "pour":
                    if str(p.get("target")) not in state.devices:
                        return "unknown_device", f"no such device: {p.get('target')}"
                elif payload.name == "revert":
                    sid = str(p.get("snapshot_id"))
                    if not any(s.snapshot_id == sid for s in state.snapshots):
                        return "unknown_snapshot", f"no such snapshot: {sid}"
                elif payload.name == "link_create":
                    if str(p.get("source")) not in state.elements:
                        return "unknown_element", f"no such element: {p.get('source')}"
                    target = str(p.get("target"))
                    if target not in state.elements and target not in state.devices:
                        return "unknown_target", f"no such link target: {target}"
            except KeyError as exc:
                return "invalid_command", f"missing parameter: {exc}"
        return None

    def apply_update(self, sender: str, payload: Payload) -> Optional[Envelope]:
        """Stamp, apply, and broadcast one write; returns the stamped
        envelope, or None when the write was rejected (Error sent to the
        sender only, no seq consumed)."""
        if sender != SERVER_SENDER and sender not in self.state.devices:
            raise HubError(f"sender has not joined: {sender}")
        problem = self._validate(sender, payload)
        if problem is not None:
            self._error_to(sender, *problem)
            return None
        env = self._stamp(sender, payload)
        apply_envelope_to_state(self.state, env)
        self._broadcast(env)
        if isinstance(payload, Command):
            try:
                events, writes = self.engine.handle_command(
                    self.state, sender, payload, env.seq
                )
            except EngineError as exc:
                self._error_to(sender, "command_failed", str(exc))
                return env
            self._emit(sender, events, writes)
        return env

    def _emit(self, sender: str, events, writes) -> None:
        for w in writes:
            self.apply_update(sender if sender != SERVER_SENDER else SERVER_SENDER, w)
        for ev in events:
            self.apply_update(sender, ev)

    # -- engine ticks

    def tick(self, dt: float) -> list[InteractionEvent]:
        events, writes = self.engine.tick(self.state, dt)
        self._emit(SERVER_SENDER, events, writes)
        return events

    # -- stream relay

    def relay_stream(
        self, sender: str, frame: bytes, now_s: Optional[float] = None
    ) -> None:
        if sender not in self.state.devices:
            raise HubError(f"sender has not joined: {sender}")
        if now_s is None:
            now_s = self._clock_ms() / 1000.0
        self.metrics.record_stream(sender, now_s)
        for did, sub in self.subscribers.items():
            if did == sender:
                continue
            if len(sub.stream) >= self.stream_queue_capacity:
                sub.stream.popleft()  # freshness over completeness
                self.metrics.frames_dropped += 1
            sub.stream.append(frame)
            self.metrics.frames_relayed += 1
            sub._notify()

    # -- observability & persistence

    def hash(self) -> str:
        return state_hash(self.state)

    def metrics_text(self) -> str:
        lines = [
            f"session {self.session_id}",
            f"messages_sequenced {self.metrics.messages_sequenced}",
            f"frames_relayed {self.metrics.frames_relayed}",
            f"frames_dropped {self.metrics.frames_dropped}",
        ]
        for sender in sorted(self.metrics.stream_arrivals):
            lines.append(f"stream_fps {sender} {self.metrics.fps(sender)}")
        lines.append(f"state_hash {self.hash()}")
        return "\n".join(lines) + "\n"

    def save(self, destination: str | Path) -> None:
        save_session(self.state, destination)

    @classmethod
    def load(cls, source: str | Path, **kwargs) -> "SessionHub":
        state = load_session(source)
        return cls(session_id=state.session_id, state=state, **kwargs)
