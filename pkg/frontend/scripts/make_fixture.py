"""Regenerates tests/fixtures/session_log.json from the Python server.

The fixture pins the exact broadcast bytes and the server's state hash so
the TypeScript replica can prove byte-for-byte parity. Run from frontend/:

    python3 scripts/make_fixture.py
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "src"))

from holosync.geometry import Pose, Quat, Vec3  # noqa: E402
from holosync.hub import SessionHub, Subscriber  # noqa: E402
from holosync.protocol import (  # noqa: E402
    Command,
    ContentRemove,
    ContentUpsert,
    Join,
    PoseUpdate,
    encode_control,
)

OBSERVER = "__observer__"


def main() -> None:
    hub = SessionHub("fixture")
    hub.subscribers[OBSERVER] = Subscriber(device_id=OBSERVER)
    observer = hub.subscribers[OBSERVER]

    d1, _ = hub.join(Join(kind="phone", width=0.07, height=0.15,
                          presence="local_physical"))
    d2, _ = hub.join(Join(kind="tablet", width=0.2, height=0.15,
                          presence="remote_holographic"))

    # awkward float spellings: integral, tiny, huge, negative zero
    hub.apply_update(d1, PoseUpdate(device_id=d1, pose=Pose(
        position=Vec3(0.1, -0.0, 1e-05),
        rotation=Quat(0.0, 0.0, 0.0, 1.0),
        scale=Vec3(2.0, 2.0, 2.0),
    )))
    hub.apply_update(d2, PoseUpdate(device_id=d2, pose=Pose(
        position=Vec3(1e16, -3.5, 0.30000000000000004),
        rotation=Quat(0.5, 0.5, 0.5, 0.5),
        scale=Vec3(1.0, 1.0, 1.0),
    )))
    hub.apply_update(d1, ContentUpsert("note", {
        "count": 7,
        "ratio": 7.0,
        "label": "héllo ✓",
        "flag": True,
        "nothing": None,
        "pts": [1, 2.5, -0.0],
    }, owner_device=d1))
    hub.apply_update(d2, ContentUpsert("note", {"ratio": 0.1}))
    hub.apply_update(d1, ContentUpsert("scratch", {"x": 1}, owner_device=d1))

    d3, welcome3 = hub.join(Join(kind="desktop", width=0.6, height=0.34,
                                 presence="remote_holographic"))
    welcome3_text = encode_control(welcome3).decode()
    hub.subscribers[d3].control.clear()

    hub.apply_update(d1, ContentRemove(element_id="scratch"))
    hub.apply_update(d1, Command(name="group_create", params={"ids": [d2, d3]}))
    hub.apply_update(d1, Command(name="link_create",
                                 params={"source": "note", "target": d2}))
    hub.apply_update(d3, Command(name="align", params={"layout": "line"}))
    hub.tick(1 / 60)

    messages = [raw.decode() for raw in observer.control]
    after3 = [raw.decode() for raw in hub.subscribers[d3].control]
    fixture = {
        "messages": messages,
        "welcome3": welcome3_text,
        "messages_after_welcome3": after3,
        "hash": hub.hash(),
        "final_seq": hub.state.seq,
    }
    out = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "session_log.json"
    out.write_text(json.dumps(fixture, indent=2), encoding="utf-8")
    print(f"wrote {out} ({len(messages)} messages, hash {fixture['hash'][:12]}...)")


if __name__ == "__main__":
    main()
