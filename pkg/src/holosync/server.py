"""WebSocket session service.

One SessionHub per session id, guarded by a per-session asyncio lock
(single logical writer). Text frames carry control envelopes, binary
frames carry "HDPC" stream frames. A background task drives the
interaction engine at the configured tick rate.
"""

from __future__ import annotations

import asyncio
import contextlib
import os
import time
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel

from .engine import EngineConfig
from .hub import SessionHub
from .protocol import (
    Command,
    ContentRemove,
    ContentUpsert,
    DecodeError,
    Envelope,
    ErrorPayload,
    Join,
    PoseUpdate,
    ProtocolError,
    decode_control,
    encode_control,
)

DEFAULT_PORT = 8787
PORT_ENV_VAR = "HOLOSYNC_PORT"


class SessionInfo(BaseModel):
    session_id: str
    devices: int
    elements: int
    seq: int
    state_hash: str


class SessionListResponse(BaseModel):
    sessions: list[SessionInfo]


class HashResponse(BaseModel):
    session_id: str
    state_hash: str
    seq: int


class _SessionRuntime:
    def __init__(self, hub: SessionHub):
        self.hub = hub
        self.lock = asyncio.Lock()
        self.wakeups: dict[str, asyncio.Event] = {}


def create_app(
    state_dir: Optional[Path] = None,
    engine_config: EngineConfig = EngineConfig(),
    frontend_dir: Optional[Path] = None,
) -> FastAPI:
    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        ticker = asyncio.create_task(_ticker())
        yield
        ticker.cancel()
        with contextlib.suppress(asyncio.CancelledError):
            await ticker
        if state_dir is not None:
            state_dir.mkdir(parents=True, exist_ok=True)
            for sid, rt in runtimes.items():
                rt.hub.save(state_dir / f"{sid}.session.json")

    app = FastAPI(title="holosync session server", lifespan=lifespan)
    runtimes: dict[str, _SessionRuntime] = {}
    app.state.runtimes = runtimes
    tick_dt = 1.0 / engine_config.tick_rate_hz

    def _get_runtime(session_id: str) -> _SessionRuntime:
        rt = runtimes.get(session_id)
        if rt is None:
            hub: Optional[SessionHub] = None
            if state_dir is not None:
                path = state_dir / f"{session_id}.session.json"
                if path.exists():
                    hub = SessionHub.load(path, engine_config=engine_config)
            if hub is None:
                hub = SessionHub(session_id, engine_config=engine_config)
            rt = _SessionRuntime(hub)
            runtimes[session_id] = rt
        return rt

    async def _ticker() -> None:
        while True:
            start = time.monotonic()
            for rt in list(runtimes.values()):
                async with rt.lock:
                    if rt.hub.state.devices:
                        rt.hub.tick(tick_dt)
            elapsed = time.monotonic() - start
            await asyncio.sleep(max(0.0, tick_dt - elapsed))

    @app.get("/sessions", response_model=SessionListResponse)
    async def list_sessions() -> SessionListResponse:
        infos = []
        for sid, rt in sorted(runtimes.items()):
            async with rt.lock:
                infos.append(
                    SessionInfo(
                        session_id=sid,
                        devices=len(rt.hub.state.devices),
                        elements=len(rt.hub.state.elements),
                        seq=rt.hub.state.seq,
                        state_hash=rt.hub.hash(),
                    )
                )
        return SessionListResponse(sessions=infos)

    @app.get("/session/{session_id}/hash", response_model=HashResponse)
    async def session_hash(session_id: str) -> HashResponse:
        rt = _get_runtime(session_id)
        async with rt.lock:
            return HashResponse(
                session_id=session_id,
                state_hash=rt.hub.hash(),
                seq=rt.hub.state.seq,
            )

    @app.get("/metrics", response_class=PlainTextResponse)
    async def metrics() -> str:
        chunks = []
        for sid, rt in sorted(runtimes.items()):
            async with rt.lock:
                chunks.append(rt.hub.metrics_text())
        return "\n".join(chunks) if chunks else "no sessions\n"

    @app.websocket("/session/{session_id}")
    async def session_socket(ws: WebSocket, session_id: str) -> None:
        await ws.accept()
        rt = _get_runtime(session_id)
        device_id: Optional[str] = None
        wake = asyncio.Event()
        sender_task: Optional[asyncio.Task] = None

        async def send_error(code: str, message: str) -> None:
            env = Envelope(payload=ErrorPayload(code=code, message=message))
            await ws.send_text(encode_control(env).decode("utf-8"))

        async def pump_outgoing(did: str) -> None:
            sub = rt.hub.subscribers.get(did)
            while True:
                await wake.wait()
                wake.clear()
                while sub.control or sub.stream:
                    if sub.control:
                        data = sub.control.popleft()
                        await ws.send_text(data.decode("utf-8"))
                    if sub.stream:
                        await ws.send_bytes(sub.stream.popleft())

        try:
            while True:
                message = await ws.receive()
                if message.get("type") == "websocket.disconnect":
                    break
                if message.get("text") is not None:
                    try:
                        env = decode_control(message["text"])
                    except ProtocolError as exc:
                        await send_error("decode_error", str(exc))
                        continue
                    payload = env.payload
                    if isinstance(payload, Join):
                        if device_id is not None:
                            await send_error("already_joined", "join already done")
                            continue
                        async with rt.lock:
                            device_id, _ = rt.hub.join(payload)
                            rt.hub.subscribers[device_id].wake = wake.set
                        sender_task = asyncio.create_task(pump_outgoing(device_id))
                        wake.set()
                        continue
                    if device_id is None:
                        await send_error("not_joined", "send a join envelope first")
                        continue
                    if isinstance(
                        payload, (PoseUpdate, ContentUpsert, ContentRemove, Command)
                    ):
                        async with rt.lock:
                            rt.hub.apply_update(device_id, payload)
                    else:
                        await send_error(
                            "unsupported", f"cannot accept {type(payload).__name__}"
                        )
                elif message.get("bytes") is not None:
                    if device_id is None:
                        await send_error("not_joined", "send a join envelope first")
                        continue
                    async with rt.lock:
                        rt.hub.relay_stream(device_id, message["bytes"])
        except WebSocketDisconnect:
            pass
        finally:
            if sender_task is not None:
                sender_task.cancel()
                with contextlib.suppress(asyncio.CancelledError):
                    await sender_task
            if device_id is not None:
                async with rt.lock:
                    rt.hub.leave(device_id)

    if frontend_dir is not None and frontend_dir.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/app", StaticFiles(directory=frontend_dir, html=True), name="app")

    return app


def resolve_port(cli_port: Optional[int]) -> int:
    if cli_port is not None:
        return cli_port
    env = os.environ.get(PORT_ENV_VAR)
    if env:
        return int(env)
    return DEFAULT_PORT
