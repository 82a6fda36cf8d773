"""Cross-device session synchronization and holographic interaction engine."""

from .geometry import (
    Arrangement,
    ContentElement,
    DeviceKind,
    DeviceRecord,
    Pose,
    Presence,
    Quat,
    ScreenExtents,
    Vec3,
    classify_arrangement,
    compose_pose,
    relative_pose,
)
from .engine import EngineConfig, InteractionEngine
from .hub import SessionHub
from .protocol import Envelope, decode_control, encode_control
from .session import SessionState, state_hash

__version__ = "0.1.0"

__all__ = [
    "Arrangement",
    "ContentElement",
    "DeviceKind",
    "DeviceRecord",
    "EngineConfig",
    "Envelope",
    "InteractionEngine",
    "Pose",
    "Presence",
    "Quat",
    "ScreenExtents",
    "SessionHub",
    "SessionState",
    "Vec3",
    "classify_arrangement",
    "compose_pose",
    "decode_control",
    "encode_control",
    "relative_pose",
    "state_hash",
    "__version__",
]
