import math

import pytest
from hypothesis import strategies as st

from holosync.geometry import (
    DeviceKind,
    DeviceRecord,
    Pose,
    Presence,
    Quat,
    ScreenExtents,
    Vec3,
)

finite = st.floats(
    min_value=-100.0, max_value=100.0, allow_nan=False, allow_infinity=False
)
positive = st.floats(
    min_value=0.1, max_value=10.0, allow_nan=False, allow_infinity=False
)


@st.composite
def vec3s(draw):
    return Vec3(draw(finite), draw(finite), draw(finite))


@st.composite
def quats(draw):
    x, y, z, w = (
        draw(st.floats(-1, 1, allow_nan=False)) for _ in range(4)
    )
    if math.sqrt(x * x + y * y + z * z + w * w) < 1e-3:
        w = 1.0
    return Quat(x, y, z, w)


@st.composite
def scales(draw, uniform=False):
    if uniform:
        s = draw(positive)
        return Vec3(s, s, s)
    return Vec3(draw(positive), draw(positive), draw(positive))


@st.composite
def poses(draw, uniform_scale=False):
    return Pose(
        position=draw(vec3s()),
        rotation=draw(quats()),
        scale=draw(scales(uniform=uniform_scale)),
    )


def make_device(
    device_id="d1",
    pos=(0.0, 0.0, 0.0),
    rot=Quat.identity(),
    scale=(1.0, 1.0, 1.0),
    extents=(0.07, 0.15),
    presence=Presence.REMOTE_HOLOGRAPHIC,
    kind=DeviceKind.PHONE,
):
    return DeviceRecord(
        device_id=device_id,
        kind=kind,
        extents=ScreenExtents(*extents),
        pose=Pose(position=Vec3(*pos), rotation=rot, scale=Vec3(*scale)),
        presence=presence,
    )


@pytest.fixture
def phone():
    return make_device()
