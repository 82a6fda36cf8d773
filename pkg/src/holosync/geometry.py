"""Geometric primitives shared by every subsystem.

Conventions: right-handed coordinates, Y up, meters. A screen lives in its
local z=0 plane with +z as the facing normal. Quaternions are stored (x, y,
z, w) and renormalized after every composition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

QUAT_NORM_TOL = 1e-6


class GeometryError(ValueError):
    pass


def _check_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise GeometryError(f"non-finite component: {v!r}")


@dataclass(frozen=True)
class Vec3:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self) -> None:
        _check_finite(self.x, self.y, self.z)

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def __neg__(self) -> "Vec3":
        return Vec3(-self.x, -self.y, -self.z)

    def scaled(self, s: float) -> "Vec3":
        return Vec3(self.x * s, self.y * s, self.z * s)

    def hadamard(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x * other.x, self.y * other.y, self.z * other.z)

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def cross(self, other: "Vec3") -> "Vec3":
        return Vec3(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )

    def norm(self) -> float:
        return math.sqrt(self.dot(self))

    def normalized(self) -> "Vec3":
        n = self.norm()
        if n == 0.0:
            raise GeometryError("cannot normalize zero vector")
        return self.scaled(1.0 / n)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class Quat:
    """Unit quaternion, component order (x, y, z, w)."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    w: float = 1.0

    def __post_init__(self) -> None:
        _check_finite(self.x, self.y, self.z, self.w)
        n = math.sqrt(self.x**2 + self.y**2 + self.z**2 + self.w**2)
        if abs(n - 1.0) > QUAT_NORM_TOL:
            if n == 0.0:
                raise GeometryError("zero quaternion")
            object.__setattr__(self, "x", self.x / n)
            object.__setattr__(self, "y", self.y / n)
            object.__setattr__(self, "z", self.z / n)
            object.__setattr__(self, "w", self.w / n)

    @staticmethod
    def identity() -> "Quat":
        return Quat(0.0, 0.0, 0.0, 1.0)

    @staticmethod
    def from_axis_angle(axis: Vec3, angle_rad: float) -> "Quat":
        a = axis.normalized()
        h = angle_rad / 2.0
        s = math.sin(h)
        return Quat(a.x * s, a.y * s, a.z * s, math.cos(h))

    def multiply(self, other: "Quat") -> "Quat":
        a, b = self, other
        return Quat(
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        )

    def conjugate(self) -> "Quat":
        return Quat(-self.x, -self.y, -self.z, self.w)

    def rotate(self, v: Vec3) -> Vec3:
        # q * (v, 0) * q^-1, expanded to avoid building temporaries
        qv = Vec3(self.x, self.y, self.z)
        t = qv.cross(v).scaled(2.0)
        return v + t.scaled(self.w) + qv.cross(t)

    def norm(self) -> float:
        return math.sqrt(self.x**2 + self.y**2 + self.z**2 + self.w**2)

    def dot(self, other: "Quat") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z + self.w * other.w

    def slerp(self, other: "Quat", t: float) -> "Quat":
        """Spherical interpolation along the shorter arc."""
        d = self.dot(other)
        b = other
        if d < 0.0:
            d = -d
            b = Quat(-other.x, -other.y, -other.z, -other.w)
        if d > 1.0 - 1e-9:
            return Quat(
                self.x + (b.x - self.x) * t,
                self.y + (b.y - self.y) * t,
                self.z + (b.z - self.z) * t,
                self.w + (b.w - self.w) * t,
            )
        theta = math.acos(max(-1.0, min(1.0, d)))
        sa = math.sin((1.0 - t) * theta) / math.sin(theta)
        sb = math.sin(t * theta) / math.sin(theta)
        return Quat(
            self.x * sa + b.x * sb,
            self.y * sa + b.y * sb,
            self.z * sa + b.z * sb,
            self.w * sa + b.w * sb,
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.z, self.w)


@dataclass(frozen=True)
class Pose:
    position: Vec3 = field(default_factory=Vec3)
    rotation: Quat = field(default_factory=Quat)
    scale: Vec3 = field(default_factory=lambda: Vec3(1.0, 1.0, 1.0))

    def __post_init__(self) -> None:
        if self.scale.x <= 0 or self.scale.y <= 0 or self.scale.z <= 0:
            raise GeometryError(f"scale components must be positive: {self.scale}")

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_translation(x: float, y: float, z: float) -> "Pose":
        return Pose(position=Vec3(x, y, z))


@dataclass(frozen=True)
class ScreenExtents:
    width: float
    height: float

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.height > 0):
            raise GeometryError(f"extents must be positive: {self.width}x{self.height}")


class DeviceKind(str, Enum):
    PHONE = "phone"
    TABLET = "tablet"
    DESKTOP = "desktop"
    HMD = "hmd"
    VIRTUAL = "virtual"


class Presence(str, Enum):
    LOCAL_PHYSICAL = "local_physical"
    REMOTE_HOLOGRAPHIC = "remote_holographic"


@dataclass
class DeviceRecord:
    device_id: str
    kind: DeviceKind = DeviceKind.PHONE
    extents: ScreenExtents = field(default_factory=lambda: ScreenExtents(0.07, 0.15))
    pose: Pose = field(default_factory=Pose)
    presence: Presence = Presence.REMOTE_HOLOGRAPHIC
    last_seq: int = 0


SHARED_SPACE = "__shared__"


@dataclass
class ContentElement:
    element_id: str
    owner_device: str = SHARED_SPACE
    attributes: dict[str, object] = field(default_factory=dict)
    attribute_seqs: dict[str, int] = field(default_factory=dict)

    def set_attribute(self, name: str, value: object, seq: int) -> bool:
        """Last-writer-wins per attribute; returns True if the write took."""
        if self.attribute_seqs.get(name, -1) >= seq:
            return False
        self.attributes[name] = value
        self.attribute_seqs[name] = seq
        return True


class Arrangement(str, Enum):
    SEPARATED = "separated"
    SIDE_BY_SIDE = "side_by_side"
    OVERLAP = "overlap"


def compose_pose(parent: Pose, child_relative: Pose) -> Pose:
    """Scene-graph composition: scale, then rotate, then translate.

    Per-axis scale multiplies componentwise; rotation is renormalized.
    """
    pos = parent.position + parent.rotation.rotate(
        parent.scale.hadamard(child_relative.position)
    )
    rot = parent.rotation.multiply(child_relative.rotation)
    return Pose(position=pos, rotation=rot, scale=parent.scale.hadamard(child_relative.scale))


def relative_pose(parent: Pose, child: Pose) -> Pose:
    """Pose R such that compose_pose(parent, R) == child."""
    inv_rot = parent.rotation.conjugate()
    delta = inv_rot.rotate(child.position - parent.position)
    inv_scale = Vec3(1.0 / parent.scale.x, 1.0 / parent.scale.y, 1.0 / parent.scale.z)
    return Pose(
        position=inv_scale.hadamard(delta),
        rotation=inv_rot.multiply(child.rotation),
        scale=inv_scale.hadamard(child.scale),
    )


def screen_plane(device: DeviceRecord) -> tuple[Vec3, Vec3, tuple[Vec3, Vec3, Vec3, Vec3]]:
    """Center, unit facing normal, and the four world-space corners.

    Corner order: (-x,-y), (+x,-y), (+x,+y), (-x,+y) in the screen's local
    frame, scaled by the pose before rotation.
    """
    pose = device.pose
    hw = device.extents.width / 2.0
    hh = device.extents.height / 2.0
    local = (
        Vec3(-hw, -hh, 0.0),
        Vec3(hw, -hh, 0.0),
        Vec3(hw, hh, 0.0),
        Vec3(-hw, hh, 0.0),
    )
    corners = tuple(
        pose.position + pose.rotation.rotate(pose.scale.hadamard(c)) for c in local
    )
    normal = pose.rotation.rotate(Vec3(0.0, 0.0, 1.0)).normalized()
    return pose.position, normal, corners  # type: ignore[return-value]


def _segment_distance(p1: Vec3, p2: Vec3, q1: Vec3, q2: Vec3) -> float:
    """Minimum distance between segments [p1,p2] and [q1,q2]."""
    d1 = p2 - p1
    d2 = q2 - q1
    r = p1 - q1
    a = d1.dot(d1)
    e = d2.dot(d2)
    f = d2.dot(r)
    if a <= 1e-18 and e <= 1e-18:
        return r.norm()
    if a <= 1e-18:
        s, t = 0.0, max(0.0, min(1.0, f / e))
    else:
        c = d1.dot(r)
        if e <= 1e-18:
            t, s = 0.0, max(0.0, min(1.0, -c / a))
        else:
            b = d1.dot(d2)
            denom = a * e - b * b
            s = max(0.0, min(1.0, (b * f - c * e) / denom)) if denom > 1e-18 else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = max(0.0, min(1.0, -c / a))
            elif t > 1.0:
                t = 1.0
                s = max(0.0, min(1.0, (b - c) / a))
    cp = p1 + d1.scaled(s)
    cq = q1 + d2.scaled(t)
    return (cp - cq).norm()


def screen_gap(a: DeviceRecord, b: DeviceRecord) -> float:
    """Minimum distance between the boundary edges of the two screens."""
    _, _, ca = screen_plane(a)
    _, _, cb = screen_plane(b)
    best = math.inf
    for i in range(4):
        p1, p2 = ca[i], ca[(i + 1) % 4]
        for j in range(4):
            q1, q2 = cb[j], cb[(j + 1) % 4]
            best = min(best, _segment_distance(p1, p2, q1, q2))
    return best


def normal_angle(a: DeviceRecord, b: DeviceRecord) -> float:
    """Angle in radians between the two screens' facing normals."""
    _, na, _ = screen_plane(a)
    _, nb, _ = screen_plane(b)
    d = max(-1.0, min(1.0, na.dot(nb)))
    return math.acos(d)


@dataclass(frozen=True)
class ArrangementThresholds:
    overlap_distance_m: float = 0.05
    overlap_angle_rad: float = math.radians(15.0)
    side_by_side_gap_m: float = 0.10
    side_by_side_angle_rad: float = math.radians(20.0)


def classify_arrangement(
    a: DeviceRecord,
    b: DeviceRecord,
    thresholds: ArrangementThresholds = ArrangementThresholds(),
) -> Arrangement:
    center_dist = (a.pose.position - b.pose.position).norm()
    angle = normal_angle(a, b)
    if center_dist < thresholds.overlap_distance_m and angle < thresholds.overlap_angle_rad:
        return Arrangement.OVERLAP
    if angle < thresholds.side_by_side_angle_rad:
        if screen_gap(a, b) < thresholds.side_by_side_gap_m:
            return Arrangement.SIDE_BY_SIDE
    return Arrangement.SEPARATED
