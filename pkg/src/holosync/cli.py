"""Command-line entry points.

Exit codes: 0 success, 1 expectation/runtime failure, 2 usage or I/O error.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from .pointcloud import PointCloudError, synthetic_frame, write_recording
from .server import DEFAULT_PORT, PORT_ENV_VAR, create_app, resolve_port
from .sim import (
    ScenarioError,
    assert_expectations,
    load_scenario,
    run_scenario,
)


@click.group()
def main() -> None:
    """Session server and deterministic scenario tools."""


@main.command()
@click.option("--port", type=int, default=None, help=f"Listen port (default ${PORT_ENV_VAR} or {DEFAULT_PORT}).")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option(
    "--state-dir",
    type=click.Path(path_type=Path),
    default=None,
    help="Directory for session persistence files (saved on shutdown).",
)
@click.option(
    "--frontend",
    type=click.Path(path_type=Path),
    default=None,
    help="Built browser client to serve at /app (default: ./frontend/dist if present).",
)
def serve(
    port: int | None, host: str, state_dir: Path | None, frontend: Path | None
) -> None:
    """Run the WebSocket session server."""
    import uvicorn

    if frontend is None:
        candidate = Path("frontend") / "dist"
        frontend = candidate if candidate.is_dir() else None
    app = create_app(state_dir=state_dir, frontend_dir=frontend)
    try:
        uvicorn.run(app, host=host, port=resolve_port(port), log_level="warning")
    except SystemExit as exc:  # uvicorn exits non-zero when the bind fails
        if exc.code:
            click.echo("error: could not start server (port in use?)", err=True)
            sys.exit(1)
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


def _load(path: Path):
    if not path.exists():
        click.echo(f"error: no such scenario: {path}", err=True)
        sys.exit(2)
    try:
        return load_scenario(path)
    except ScenarioError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


@main.command()
@click.argument("scenario", type=click.Path(path_type=Path))
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option(
    "--log-out",
    type=click.Path(path_type=Path),
    default=None,
    help="Write the broadcast event log (one envelope per line) for later replay.",
)
def run(scenario: Path, seed: int | None, log_out: Path | None) -> None:
    """Run a scenario and report its expectations."""
    scn = _load(scenario)
    if seed is not None:
        scn.seed = seed
    result = run_scenario(scn)
    if log_out is not None:
        try:
            log_out.write_bytes(b"\n".join(result.event_log) + b"\n")
        except OSError as exc:
            click.echo(f"error: cannot write log: {exc}", err=True)
            sys.exit(2)
    checks = assert_expectations(result)
    for check in checks:
        click.echo(check.line())
    sys.exit(0 if all(c.passed for c in checks) else 1)


@main.command()
@click.argument("scenario", type=click.Path(path_type=Path))
@click.argument("log", type=click.Path(path_type=Path))
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
def replay(scenario: Path, log: Path, seed: int | None) -> None:
    """Re-run a scenario and diff its event log against a saved one."""
    scn = _load(scenario)
    if seed is not None:
        scn.seed = seed
    if not log.exists():
        click.echo(f"error: no such log: {log}", err=True)
        sys.exit(2)
    saved = log.read_bytes().splitlines()
    fresh = run_scenario(scn).event_log
    if saved == fresh:
        click.echo(f"identical: {len(fresh)} envelopes")
        sys.exit(0)
    click.echo(f"mismatch: saved={len(saved)} fresh={len(fresh)} envelopes")
    for i, (a, b) in enumerate(zip(saved, fresh)):
        if a != b:
            click.echo(f"first difference at line {i + 1}:")
            click.echo(f"  saved: {a.decode('utf-8', 'replace')}")
            click.echo(f"  fresh: {b.decode('utf-8', 'replace')}")
            break
    sys.exit(1)


@main.command("gen-depth")
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.option("--frames", type=int, default=10, show_default=True)
@click.option("--width", type=int, default=640, show_default=True)
@click.option("--height", type=int, default=576, show_default=True)
@click.option(
    "--pattern",
    type=click.Choice(["wall", "sphere", "person"]),
    default="person",
    show_default=True,
)
@click.option("--fps", type=float, default=30.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def gen_depth(
    out_path: Path,
    frames: int,
    width: int,
    height: int,
    pattern: str,
    fps: float,
    seed: int,
) -> None:
    """Write a deterministic synthetic depth recording."""
    if frames < 0 or fps <= 0:
        click.echo("error: frames must be >= 0 and fps > 0", err=True)
        sys.exit(2)
    frame_iter = (
        synthetic_frame(
            pattern=pattern,
            width=width,
            height=height,
            timestamp_ms=int(round(i * 1000.0 / fps)),
            seed=seed + i,
        )
        for i in range(frames)
    )
    try:
        written = write_recording(out_path, frame_iter)
    except (OSError, PointCloudError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"wrote {written} frames to {out_path}")


@main.command()
@click.option("--url", default=None, help="Server base URL (default from $HOLOSYNC_PORT).")
def metrics(url: str | None) -> None:
    """Fetch and print the server's plain-text metrics."""
    import requests

    if url is None:
        port = os.environ.get(PORT_ENV_VAR, str(DEFAULT_PORT))
        url = f"http://127.0.0.1:{port}"
    try:
        resp = requests.get(f"{url.rstrip('/')}/metrics", timeout=5)
        resp.raise_for_status()
    except requests.RequestException as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(resp.text, nl=False)


if __name__ == "__main__":
    main()
