"""Interaction engine tests: possession timing, bump, snap, align, pour,
proxemics, extended screens, slicing, snapshots, links."""

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from holosync.engine import (
    AlignedVolume,
    EngineConfig,
    EngineError,
    InteractionEngine,
    PossessionFSM,
    PossessionPhase,
    align_devices,
    element_shared_position,
    extended_local_to_shared,
    extended_shared_to_local,
    flick_release,
    hand_world_position,
    proxemic_level,
    record_snapshot,
    revert_candidate,
    slice_plane,
    update_possession,
)
from holosync.geometry import (
    ContentElement,
    Pose,
    Presence,
    Quat,
    Vec3,
    compose_pose,
)
from holosync.protocol import Command, HandFrame, PoseUpdate
from holosync.session import SessionState

from conftest import make_device

DT = 1.0 / 60.0


def make_state(*devices):
    state = SessionState(session_id="t")
    for d in devices:
        state.devices[d.device_id] = d
    return state


class TestPossessionFSM:
    def test_grants_after_hold(self):
        fsm = PossessionFSM("a", "b")
        fired = None
        ticks = 0
        while fired is None:
            fsm, fired = update_possession(fsm, 0.04, 0.1)
            ticks += 1
        assert ticks == 10  # 10 * 0.1 s reaches the 1.0 s hold exactly
        assert fsm.phase == PossessionPhase.POSSESSED

    def test_boundary_distance_disrupts(self):
        # the threshold is strict: exactly 0.05 m does not arm
        fsm = PossessionFSM("a", "b")
        fsm, fired = update_possession(fsm, 0.05, 0.1)
        assert fsm.phase == PossessionPhase.IDLE and fired is None
        fsm, _ = update_possession(fsm, 0.0499999, 0.1)
        assert fsm.phase == PossessionPhase.ARMING

    def test_excursion_resets_timer(self):
        fsm = PossessionFSM("a", "b")
        for _ in range(9):
            fsm, fired = update_possession(fsm, 0.04, 0.1)
            assert fired is None
        fsm, fired = update_possession(fsm, 0.06, 0.1)
        assert fired is None and fsm.elapsed_s == 0.0
        for i in range(10):
            fsm, fired = update_possession(fsm, 0.04, 0.1)
        assert fired == "possession_granted"

    def test_no_refire_once_possessed(self):
        fsm = PossessionFSM("a", "b")
        for _ in range(10):
            fsm, fired = update_possession(fsm, 0.04, 0.1)
        fsm, fired = update_possession(fsm, 0.04, 0.1)
        assert fired is None

    def test_invalid_inputs(self):
        with pytest.raises(EngineError):
            update_possession(PossessionFSM("a", "b"), -0.1, 0.1)
        with pytest.raises(EngineError):
            update_possession(PossessionFSM("a", "b"), 0.1, 0.0)


class TestPossessionTick:
    def _run(self, distance, seconds):
        local = make_device("a", presence=Presence.LOCAL_PHYSICAL)
        holo = make_device("b", pos=(distance, 0, 0))
        state = make_state(local, holo)
        engine = InteractionEngine()
        out = []
        for _ in range(int(seconds / DT)):
            events, _ = engine.tick(state, DT)
            out.extend(events)
        return [e for e in out if e.kind == "possession_granted"]

    def test_grant_at_one_second(self):
        grants = self._run(0.04, 1.5)
        assert len(grants) == 1
        assert abs(grants[0].tick_time_s - 1.0) <= DT + 1e-9

    def test_no_grant_at_threshold(self):
        assert self._run(0.05, 2.0) == []

    def test_tie_breaks_to_lowest_id(self):
        local = make_device("a", presence=Presence.LOCAL_PHYSICAL)
        b = make_device("b", pos=(0.03, 0, 0))
        c = make_device("c", pos=(0.03, 0, 0))
        state = make_state(local, b, c)
        engine = InteractionEngine()
        grants = []
        for _ in range(70):
            events, _ = engine.tick(state, DT)
            grants.extend(e for e in events if e.kind == "possession_granted")
        assert grants and grants[0].participants == ("a", "b")

    def test_release_frees_both_sides(self):
        local = make_device("a", presence=Presence.LOCAL_PHYSICAL)
        holo = make_device("b", pos=(0.03, 0, 0))
        state = make_state(local, holo)
        engine = InteractionEngine()
        for _ in range(70):
            engine.tick(state, DT)
        assert engine.possessed == {"a": "b"}
        ev = engine.release_possession("b")  # either side may release
        assert ev is not None and ev.kind == "possession_released"
        assert engine.possessed == {}


class TestBump:
    def _bump_state(self):
        a = make_device("a", pos=(0, 0, 0.5), presence=Presence.LOCAL_PHYSICAL)
        b = make_device("b")
        state = make_state(a, b)
        state.elements["note"] = ContentElement(
            element_id="note", owner_device="a", attributes={"text": "hi"}
        )
        return state

    def test_single_bump_with_copy(self):
        state = self._bump_state()
        engine = InteractionEngine()
        speed = 0.3  # m/s toward b
        events = []
        z = 0.5
        for _ in range(200):
            z = max(0.0, z - speed * DT)
            state.devices["a"].pose = Pose.from_translation(0, 0, z)
            evs, writes = engine.tick(state, DT)
            events.extend(evs)
        bumps = [e for e in events if e.kind == "bump"]
        assert len(bumps) == 1
        assert bumps[0].participants == ("a", "b")  # mover initiates
        assert bumps[0].payload["copied"] == ["note.copy1"]

    def test_slow_approach_never_bumps(self):
        state = self._bump_state()
        engine = InteractionEngine()
        z = 0.1
        events = []
        for _ in range(400):
            z = max(0.0, z - 0.05 * DT)  # below the 0.1 m/s threshold
            state.devices["a"].pose = Pose.from_translation(0, 0, z)
            evs, _ = engine.tick(state, DT)
            events.extend(evs)
        assert [e for e in events if e.kind == "bump"] == []

    def test_oscillation_respects_refractory(self):
        state = self._bump_state()
        engine = InteractionEngine()
        events = []
        t = 0.0
        for _ in range(120):  # 2 s of 4 Hz oscillation against the gap
            t += DT
            z = 0.05 + 0.04 * math.sin(2 * math.pi * 4 * t)
            state.devices["a"].pose = Pose.from_translation(0, 0, z)
            evs, _ = engine.tick(state, DT)
            events.extend(evs)
        bumps = [e for e in events if e.kind == "bump"]
        assert 1 <= len(bumps) <= 2  # one per refractory second at most

    def test_copies_are_independent(self):
        state = self._bump_state()
        engine = InteractionEngine()
        z = 0.1
        writes = []
        for _ in range(200):
            z = max(0.0, z - 0.3 * DT)
            state.devices["a"].pose = Pose.from_translation(0, 0, z)
            evs, w = engine.tick(state, DT)
            writes.extend(w)
        upserts = [w for w in writes if hasattr(w, "element_id")]
        assert upserts and upserts[0].element_id == "note.copy1"
        assert upserts[0].owner_device == "b"
        assert upserts[0].attributes == {"text": "hi"}

    def test_group_fanout(self):
        state = self._bump_state()
        state.devices["c"] = make_device("c", pos=(5, 0, 0))
        state.groups["g1"] = ["b", "c"]
        engine = InteractionEngine()
        z = 0.1
        writes = []
        for _ in range(200):
            z = max(0.0, z - 0.3 * DT)
            state.devices["a"].pose = Pose.from_translation(0, 0, z)
            _, w = engine.tick(state, DT)
            writes.extend(w)
        owners = sorted(w.owner_device for w in writes if hasattr(w, "element_id"))
        assert owners == ["b", "c"]


class TestSnap:
    def test_follow_is_rigid_under_random_moves(self):
        anchor = make_device("a", presence=Presence.LOCAL_PHYSICAL)
        target = make_device("b", pos=(0.3, 0.1, 0))
        state = make_state(anchor, target)
        engine = InteractionEngine()
        ev, restore = engine.attach_snap(state, "a", "b")
        assert ev.kind == "snap_attached" and restore is None
        relative = engine.snap_bindings["a"].relative
        rng = random.Random(5)
        for _ in range(100):
            anchor.pose = Pose(
                position=Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)),
                rotation=Quat.from_axis_angle(
                    Vec3(rng.random() + 0.01, rng.random(), rng.random()),
                    rng.uniform(0, math.pi),
                ),
            )
            _, writes = engine.tick(state, DT)
            follow = [w for w in writes if isinstance(w, PoseUpdate)]
            assert len(follow) == 1
            target.pose = follow[0].pose
            expected = compose_pose(anchor.pose, relative)
            delta = (target.pose.position - expected.position).norm()
            assert delta < 1e-9

    def test_second_attach_restores_first_exactly(self):
        anchor = make_device("a", presence=Presence.LOCAL_PHYSICAL)
        first = make_device("b", pos=(0.3, 0, 0))
        second = make_device("c", pos=(-0.3, 0, 0))
        state = make_state(anchor, first, second)
        engine = InteractionEngine()
        original = first.pose
        engine.attach_snap(state, "a", "b")
        # drag the anchor; the follower moves
        anchor.pose = Pose.from_translation(0, 0.5, 0)
        _, writes = engine.tick(state, DT)
        first.pose = writes[0].pose
        assert first.pose != original
        ev, restore = engine.attach_snap(state, "a", "c")
        assert restore is not None
        restore_write, release_ev = restore
        assert release_ev.kind == "snap_released"
        assert restore_write.device_id == "b"
        assert restore_write.pose == original  # exact value equality

    def test_release_restores(self):
        anchor = make_device("a", presence=Presence.LOCAL_PHYSICAL)
        target = make_device("b", pos=(0.3, 0, 0))
        state = make_state(anchor, target)
        engine = InteractionEngine()
        original = target.pose
        engine.attach_snap(state, "a", "b")
        anchor.pose = Pose.from_translation(1, 1, 1)
        engine.tick(state, DT)
        released = engine.release_snap("a")
        assert released is not None
        assert released[0].pose == original
        assert engine.release_snap("a") is None

    def test_cannot_snap_physical_or_self(self):
        a = make_device("a", presence=Presence.LOCAL_PHYSICAL)
        b = make_device("b", presence=Presence.LOCAL_PHYSICAL)
        state = make_state(a, b)
        engine = InteractionEngine()
        with pytest.raises(EngineError):
            engine.attach_snap(state, "a", "a")
        with pytest.raises(EngineError):
            engine.attach_snap(state, "a", "b")

    def test_auto_attach_only_when_enabled(self):
        a = make_device("a", presence=Presence.LOCAL_PHYSICAL)
        b = make_device("b", pos=(0.1, 0, 0))
        state = make_state(a, b)
        off = InteractionEngine()
        for _ in range(120):
            off.tick(state, DT)
        assert off.snap_bindings == {}
        on = InteractionEngine(EngineConfig(snap_auto_attach=True))
        events = []
        for _ in range(120):
            evs, _ = on.tick(state, DT)
            events.extend(evs)
        assert any(e.kind == "snap_attached" for e in events)


class TestAlign:
    def _fleet(self, n, physical_ids=()):
        return [
            make_device(
                f"d{i:02d}",
                pos=(random.Random(i).uniform(-1, 1), 0, 0),
                presence=Presence.LOCAL_PHYSICAL
                if f"d{i:02d}" in physical_ids
                else Presence.REMOTE_HOLOGRAPHIC,
            )
            for i in range(n)
        ]

    def test_line_layout_sorted(self):
        devices = self._fleet(3)
        order = {"d00": "c", "d01": "a", "d02": "b"}
        out = align_devices(devices, lambda d: order[d.device_id], "line")
        pitch = 1.2 * 0.07
        assert out["d01"].position.x == 0
        assert abs(out["d02"].position.x - pitch) < 1e-12
        assert abs(out["d00"].position.x - 2 * pitch) < 1e-12

    def test_grid_15_is_4_columns(self):
        devices = self._fleet(15)
        out = align_devices(devices, lambda d: d.device_id, "grid")
        xs = sorted({round(p.position.x, 9) for p in out.values()})
        ys = sorted({round(p.position.y, 9) for p in out.values()})
        assert len(xs) == 4  # ceil(sqrt(15)) columns
        assert len(ys) == 4  # 4 rows, last one short
        # no two screens overlap: pitch exceeds the screen width
        assert xs[1] - xs[0] > 0.07

    def test_stack_layout(self):
        devices = self._fleet(3)
        out = align_devices(devices, lambda d: d.device_id, "stack")
        zs = sorted(round(p.position.z, 9) for p in out.values())
        assert zs == [0.0, 0.05, 0.1]

    def test_physical_devices_never_move(self):
        devices = self._fleet(4, physical_ids={"d01"})
        out = align_devices(devices, lambda d: d.device_id, "line")
        assert "d01" not in out and len(out) == 3

    def test_origin_offsets_layout(self):
        devices = self._fleet(2)
        origin = Pose.from_translation(1, 2, 3)
        out = align_devices(devices, lambda d: d.device_id, "line", origin=origin)
        assert out["d00"].position == Vec3(1, 2, 3)

    def test_unknown_layout(self):
        with pytest.raises(EngineError):
            align_devices(self._fleet(2), lambda d: d.device_id, "spiral")

    def test_scale_preserved(self):
        devices = self._fleet(2)
        devices[0].pose = Pose(position=Vec3(), scale=Vec3(2, 2, 2))
        out = align_devices(devices, lambda d: d.device_id, "line")
        assert out["d00"].scale == Vec3(2, 2, 2)


class TestProxemics:
    def test_levels(self):
        assert proxemic_level(0.1) == 0
        assert proxemic_level(0.5) == 1
        assert proxemic_level(2.0) == 2
        assert proxemic_level(5.0) == 3
        assert proxemic_level(0.3) == 1  # boundary counts as crossed

    def test_bad_zones(self):
        with pytest.raises(EngineError):
            proxemic_level(1.0, ())
        with pytest.raises(EngineError):
            proxemic_level(1.0, (1.0, 0.5))

    def test_first_observation_is_baseline(self):
        a = make_device("a")
        b = make_device("b", pos=(2, 0, 0))
        state = make_state(a, b)
        engine = InteractionEngine()
        events, _ = engine.tick(state, DT)
        assert [e for e in events if e.kind == "proxemic_changed"] == []

    def test_hysteresis_suppresses_jitter(self):
        a = make_device("a")
        b = make_device("b", pos=(0.99, 0, 0))
        state = make_state(a, b)
        engine = InteractionEngine()
        engine.tick(state, DT)
        events = []
        for i in range(40):  # oscillate right around the 1.0 m boundary
            x = 0.99 if i % 2 == 0 else 1.01
            b.pose = Pose.from_translation(x, 0, 0)
            evs, _ = engine.tick(state, DT)
            events.extend(evs)
        assert [e for e in events if e.kind == "proxemic_changed"] == []

    def test_clear_crossing_fires_once(self):
        a = make_device("a")
        b = make_device("b", pos=(0.5, 0, 0))
        state = make_state(a, b)
        engine = InteractionEngine()
        engine.tick(state, DT)
        b.pose = Pose.from_translation(1.5, 0, 0)  # well past 1.0 * 1.1
        events, _ = engine.tick(state, DT)
        changed = [e for e in events if e.kind == "proxemic_changed"]
        assert len(changed) == 1
        assert changed[0].payload == {"level": 2, "previous": 1}


class TestExtendedScreens:
    def test_roundtrip_property(self):
        rng = random.Random(11)
        for _ in range(2000):
            dev = make_device(
                "d",
                pos=(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)),
                rot=Quat.from_axis_angle(
                    Vec3(rng.random() + 0.01, rng.random(), rng.random()),
                    rng.uniform(0, math.pi),
                ),
                extents=(0.2, 0.3),
            )
            local = (rng.uniform(-0.1, 0.1), rng.uniform(-0.15, 0.15))
            shared = extended_local_to_shared(dev, local)
            back = extended_shared_to_local(dev, shared)
            assert back is not None
            assert abs(back[0] - local[0]) < 1e-6
            assert abs(back[1] - local[1]) < 1e-6

    def test_point_outside_extents(self):
        dev = make_device("d", extents=(0.2, 0.3))
        assert extended_shared_to_local(dev, Vec3(0.2, 0, 0)) is None

    def test_scale_widens_reach(self):
        dev = make_device("d", extents=(0.2, 0.3), scale=(3, 3, 3))
        assert extended_shared_to_local(dev, Vec3(0.25, 0, 0)) is not None

    def test_element_shared_position(self):
        dev = make_device("d", pos=(1, 0, 0))
        state = make_state(dev)
        el2 = ContentElement("e2", owner_device="d", attributes={"position": [0.01, 0.02]})
        el3 = ContentElement("e3", attributes={"position": [1, 2, 3]})
        assert element_shared_position(el2, state) == Vec3(1.01, 0.02, 0)
        assert element_shared_position(el3, state) == Vec3(1, 2, 3)
        el_bad = ContentElement("e4", attributes={"position": "north"})
        assert element_shared_position(el_bad, state) is None


class TestSlicePlane:
    """Oracle: intersect each box edge with the plane directly; the clipped
    polygon's vertex set must match those intersection points."""

    @staticmethod
    def _edge_oracle(volume, center, normal):
        lo, hi = volume.min_corner, volume.max_corner
        corners = [
            Vec3(x, y, z)
            for x in (lo.x, hi.x)
            for y in (lo.y, hi.y)
            for z in (lo.z, hi.z)
        ]
        edges = []
        for i, a in enumerate(corners):
            for b in corners[i + 1 :]:
                if sum(1 for u, v in zip(a.as_tuple(), b.as_tuple()) if u != v) == 1:
                    edges.append((a, b))
        pts = []
        for a, b in edges:
            wa = volume.pose.position + volume.pose.rotation.rotate(
                volume.pose.scale.hadamard(a)
            )
            wb = volume.pose.position + volume.pose.rotation.rotate(
                volume.pose.scale.hadamard(b)
            )
            da = (wa - center).dot(normal)
            db = (wb - center).dot(normal)
            if da == db:
                continue
            t = da / (da - db)
            if 0 <= t <= 1:
                pts.append(wa + (wb - wa).scaled(t))
        return pts

    def test_matches_edge_intersection_oracle(self):
        rng = random.Random(13)
        hits = 0
        for _ in range(200):
            volume = AlignedVolume(
                min_corner=Vec3(-0.5, -0.4, -0.3),
                max_corner=Vec3(0.5, 0.4, 0.3),
                pose=Pose(
                    position=Vec3(rng.uniform(-0.2, 0.2), 0, 0),
                    rotation=Quat.from_axis_angle(
                        Vec3(rng.random() + 0.1, rng.random(), rng.random()),
                        rng.uniform(0, math.pi),
                    ),
                ),
            )
            dev = make_device(
                "d",
                pos=(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 0),
                rot=Quat.from_axis_angle(Vec3(0, 1, 0), rng.uniform(0, math.pi)),
            )
            result = slice_plane(dev, volume)
            from holosync.geometry import screen_plane

            center, normal, _ = screen_plane(dev)
            oracle = self._edge_oracle(volume, center, normal)
            if result is None:
                assert len(oracle) < 3
                continue
            hits += 1
            _, _, poly = result
            assert len(poly) >= 3
            # every polygon vertex lies on the plane and inside the box faces
            for p in poly:
                assert abs((p - center).dot(normal)) < 1e-6
            # vertex sets agree (both are the section polygon's corners)
            assert len(poly) == len(oracle)
            for p in poly:
                assert min((p - q).norm() for q in oracle) < 1e-6
        assert hits > 50  # the sweep actually exercised intersecting planes

    def test_miss_returns_none(self):
        volume = AlignedVolume(Vec3(-0.1, -0.1, -0.1), Vec3(0.1, 0.1, 0.1))
        dev = make_device("d", pos=(0, 0, 5))
        assert slice_plane(dev, volume) is None

    def test_axis_aligned_section_area(self):
        volume = AlignedVolume(Vec3(-1, -2, -3), Vec3(1, 2, 3))
        dev = make_device("d")  # plane z=0 through the middle
        _, _, poly = slice_plane(dev, volume)
        xs = {round(p.x, 9) for p in poly}
        ys = {round(p.y, 9) for p in poly}
        assert xs == {-1.0, 1.0} and ys == {-2.0, 2.0}


class TestFlickPourRevert:
    def test_flick_below_speed_stays(self):
        dev = make_device("d")
        el = ContentElement("e", owner_device="d", attributes={"position": [0, 0]})
        assert flick_release(el, (0.3, 0), dev) is None

    def test_flick_lands_past_the_edge(self):
        dev = make_device("d", extents=(0.2, 0.2))
        el = ContentElement("e", owner_device="d", attributes={"position": [0, 0]})
        landing = flick_release(el, (1.0, 0), dev)
        assert landing is not None
        assert abs(landing.x - (0.1 + 0.3)) < 1e-9

    def test_flick_wrong_owner(self):
        dev = make_device("d")
        el = ContentElement("e", owner_device="other")
        with pytest.raises(EngineError):
            flick_release(el, (1, 0), dev)

    def test_pour_requires_roll_and_altitude(self):
        top = make_device("a", pos=(0, 0.3, 0), presence=Presence.LOCAL_PHYSICAL)
        bottom = make_device("b")
        state = make_state(top, bottom)
        state.elements["e"] = ContentElement("e", owner_device="a", attributes={"v": 1})
        engine = InteractionEngine()
        events = []
        for _ in range(60):
            evs, _ = engine.tick(state, DT)
            events.extend(evs)
        assert [e for e in events if e.kind == "pour"] == []  # not rolled
        top.pose = Pose(
            position=Vec3(0, 0.3, 0),
            rotation=Quat.from_axis_angle(Vec3(0, 0, 1), math.radians(150)),
        )
        for _ in range(60):
            evs, writes = engine.tick(state, DT)
            events.extend(evs)
        pours = [e for e in events if e.kind == "pour"]
        assert len(pours) == 1
        assert pours[0].participants == ("a", "b")

    def test_snapshot_and_revert(self):
        dev = make_device("d", presence=Presence.LOCAL_PHYSICAL)
        state = make_state(dev)
        state.elements["e"] = ContentElement(
            "e", owner_device="d", attributes={"x": 1}, attribute_seqs={"x": 1}
        )
        snap = record_snapshot("d", state, "s1")
        state.snapshots.append(snap)
        assert snap.elements["e"].attributes == {"x": 1}
        assert abs(snap.display_pose.position.z - 0.05) < 1e-12
        # captured copy is isolated from later edits
        state.elements["e"].attributes["x"] = 2
        assert snap.elements["e"].attributes == {"x": 1}
        engine = InteractionEngine()
        ev, writes = engine.apply_revert(state, "d", "s1")
        assert ev.kind == "snapshot_reverted"
        assert writes[0].attributes == {"x": 1}

    def test_revert_candidate_nearest_then_latest(self):
        s1 = record_snapshot(
            "d", make_state(make_device("d", pos=(0, 0, 0))), "s1"
        )
        s2 = record_snapshot(
            "d", make_state(make_device("d", pos=(0, 0, 0))), "s2"
        )
        pose = Pose.from_translation(0, 0, 0.05)  # on top of both displays
        assert revert_candidate(pose, [s1, s2]) == "s2"  # tie: latest wins
        assert revert_candidate(Pose.from_translation(1, 0, 0), [s1, s2]) is None

    def test_hand_world_position(self):
        frame = HandFrame(
            device_id="d",
            joints=((0, Vec3(1, 2, 3)), (4, Vec3(9, 9, 9))),
            root_scale=Vec3(2, 0.5, 1),
            timestamp_ms=0,
        )
        assert hand_world_position(frame) == Vec3(2, 1, 3)


class TestCommands:
    def _engine_state(self):
        a = make_device("a", presence=Presence.LOCAL_PHYSICAL)
        b = make_device("b", pos=(0.5, 0, 0))
        c = make_device("c", pos=(-0.5, 0, 0))
        state = make_state(a, b, c)
        state.elements["e"] = ContentElement("e", owner_device="a", attributes={"v": 1})
        return InteractionEngine(), state

    def test_align_command(self):
        engine, state = self._engine_state()
        events, writes = engine.handle_command(
            state, "a", Command(name="align", params={"layout": "line"}), seq=10
        )
        assert events[0].kind == "align_applied"
        assert sorted(w.device_id for w in writes) == ["b", "c"]

    def test_group_lifecycle(self):
        engine, state = self._engine_state()
        events, _ = engine.handle_command(
            state, "a", Command(name="group_create", params={"ids": ["b", "c"]}), seq=4
        )
        assert events[0].payload["group_id"] == "g4"
        state.groups["g4"] = ["b", "c"]
        events, writes = engine.handle_command(
            state,
            "a",
            Command(
                name="group_move",
                params={
                    "group_id": "g4",
                    "delta": {"pos": [0, 1, 0], "rot": [0, 0, 0, 1], "scale": [1, 1, 1]},
                },
            ),
            seq=5,
        )
        assert {w.device_id for w in writes} == {"b", "c"}
        assert all(w.pose.position.y == 1 for w in writes)

    def test_pour_command_copies(self):
        engine, state = self._engine_state()
        events, writes = engine.handle_command(
            state, "a", Command(name="pour", params={"target": "b"}), seq=3
        )
        assert events[0].kind == "pour"
        assert writes[0].element_id == "e.copy1"
        assert writes[0].owner_device == "b"

    def test_snapshot_then_revert_command(self):
        engine, state = self._engine_state()
        events, _ = engine.handle_command(
            state, "a", Command(name="record_snapshot", params={}), seq=9
        )
        assert events[0].payload["snapshot_id"] == "s9"
        events, writes = engine.handle_command(
            state, "a", Command(name="revert", params={"snapshot_id": "s9"}), seq=10
        )
        assert events[0].kind == "snapshot_reverted"
        assert writes[0].element_id == "e"

    def test_link_create_event(self):
        engine, state = self._engine_state()
        events, _ = engine.handle_command(
            state, "a", Command(name="link_create", params={"source": "e", "target": "b"}), seq=6
        )
        assert events[0].kind == "link_created"
        assert events[0].payload["link_id"] == "l6"

    def test_unknown_targets_raise(self):
        engine, state = self._engine_state()
        with pytest.raises(EngineError):
            engine.handle_command(
                state, "a", Command(name="pour", params={"target": "zz"}), seq=2
            )
        with pytest.raises(EngineError):
            engine.handle_command(
                state, "a", Command(name="revert", params={"snapshot_id": "s99"}), seq=2
            )
