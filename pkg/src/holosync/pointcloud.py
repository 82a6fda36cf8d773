"""User-embodiment data path: RGBD frames -> points -> stride downsample ->
packed 9-byte points -> throttled relay, with per-stage latency metrics.

All stages are pure given their input frame; throttling keys off frame
timestamps, never the wall clock, so runs replay deterministically.
"""

from __future__ import annotations

import statistics
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Optional

import numpy as np

POINT_BYTES = 9
PACK_RANGE_MM = 32767  # signed 16-bit millimeters
RECORDING_MAGIC_STRUCT = struct.Struct("<IIffff")  # width, height, fx, fy, cx, cy
FRAME_TS_STRUCT = struct.Struct("<Q")

DEFAULT_WIDTH = 640
DEFAULT_HEIGHT = 576


class PointCloudError(Exception):
    pass


@dataclass
class DepthFrame:
    width: int
    height: int
    depth: np.ndarray  # (h*w,) u16 millimeters, 0 = invalid
    color: np.ndarray  # (h*w*3,) u8 RGB
    fx: float
    fy: float
    cx: float
    cy: float
    timestamp_ms: int = 0

    def __post_init__(self) -> None:
        n = self.width * self.height
        self.depth = np.ascontiguousarray(self.depth, dtype=np.uint16).reshape(-1)
        self.color = np.ascontiguousarray(self.color, dtype=np.uint8).reshape(-1)
        if self.depth.size != n:
            raise PointCloudError(f"depth length {self.depth.size} != {n}")
        if self.color.size != n * 3:
            raise PointCloudError(f"color length {self.color.size} != {n * 3}")
        if self.fx <= 0 or self.fy <= 0:
            raise PointCloudError("focal lengths must be positive")


@dataclass
class PointCloud:
    xyz: np.ndarray  # (n, 3) float64 meters
    rgb: np.ndarray  # (n, 3) u8
    frame_id: int = 0
    timestamp_ms: int = 0

    def __len__(self) -> int:
        return int(self.xyz.shape[0])


def depth_to_points(frame: DepthFrame, frame_id: int = 0) -> PointCloud:
    """Pinhole unprojection; zero-depth pixels are skipped, order row-major."""
    d = frame.depth.astype(np.float64)
    valid = frame.depth > 0
    idx = np.nonzero(valid)[0]
    v, u = np.divmod(idx, frame.width)
    z = d[idx] / 1000.0
    x = (u - frame.cx) * z / frame.fx
    y = (v - frame.cy) * z / frame.fy
    xyz = np.stack([x, y, z], axis=1)
    rgb = frame.color.reshape(-1, 3)[idx]
    return PointCloud(xyz=xyz, rgb=rgb, frame_id=frame_id, timestamp_ms=frame.timestamp_ms)


def downsample_stride(cloud: PointCloud, stride: int = 2) -> PointCloud:
    """Keep every stride-th point: output[i] == input[i*stride]."""
    if stride < 1:
        raise PointCloudError(f"stride must be >= 1, got {stride}")
    return PointCloud(
        xyz=cloud.xyz[::stride],
        rgb=cloud.rgb[::stride],
        frame_id=cloud.frame_id,
        timestamp_ms=cloud.timestamp_ms,
    )


def pack_points(cloud: PointCloud) -> bytes:
    """9 bytes per point: x, y, z as i16 millimeters LE, then r, g, b."""
    mm = np.rint(cloud.xyz * 1000.0)
    bad = np.nonzero(np.abs(mm) > PACK_RANGE_MM)[0]
    if bad.size:
        raise PointCloudError(
            f"point {int(bad[0])} out of packable range (+-32.767 m)"
        )
    n = len(cloud)
    buf = np.empty((n, POINT_BYTES), dtype=np.uint8)
    buf[:, 0:6] = mm.astype("<i2").view(np.uint8).reshape(n, 6)
    buf[:, 6:9] = cloud.rgb
    return buf.tobytes()


def unpack_points(data: bytes, frame_id: int = 0, timestamp_ms: int = 0) -> PointCloud:
    if len(data) % POINT_BYTES != 0:
        raise PointCloudError(
            f"packed payload length {len(data)} is not a multiple of {POINT_BYTES}"
        )
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, POINT_BYTES)
    mm = raw[:, 0:6].copy().view("<i2").astype(np.float64)
    return PointCloud(
        xyz=mm / 1000.0,
        rgb=raw[:, 6:9].copy(),
        frame_id=frame_id,
        timestamp_ms=timestamp_ms,
    )


class Throttle:
    """Admit frames no faster than the target rate, judged by frame
    timestamps. The first frame is always admitted."""

    def __init__(self, target_fps: float):
        if target_fps <= 0:
            raise PointCloudError("target_fps must be positive")
        self.min_gap_ms = 1000.0 / target_fps
        self._next_due_ms: Optional[float] = None

    def admit(self, timestamp_ms: float) -> bool:
        # due-time scheduling rather than gap-from-last: a 30 FPS input
        # sustains the full target rate instead of quantizing to half of it
        if self._next_due_ms is None:
            self._next_due_ms = timestamp_ms + self.min_gap_ms
            return True
        if timestamp_ms + 1e-9 < self._next_due_ms:
            return False
        self._next_due_ms += self.min_gap_ms
        if timestamp_ms >= self._next_due_ms:  # long stall: no burst catch-up
            self._next_due_ms = timestamp_ms + self.min_gap_ms
        return True


@dataclass
class PipelineMetrics:
    frames_in: int = 0
    frames_out: int = 0
    dropped: int = 0
    latencies_ms: list[float] = field(default_factory=list)
    first_in_ms: Optional[float] = None
    last_in_ms: Optional[float] = None
    first_out_ms: Optional[float] = None
    last_out_ms: Optional[float] = None

    def record_in(self, timestamp_ms: float) -> None:
        self.frames_in += 1
        if self.first_in_ms is None:
            self.first_in_ms = timestamp_ms
        self.last_in_ms = timestamp_ms

    def record_out(self, timestamp_ms: float, latency_ms: float) -> None:
        self.frames_out += 1
        self.latencies_ms.append(latency_ms)
        if self.first_out_ms is None:
            self.first_out_ms = timestamp_ms
        self.last_out_ms = timestamp_ms

    def record_drop(self) -> None:
        self.dropped += 1

    @staticmethod
    def _fps(count: int, first: Optional[float], last: Optional[float]) -> float:
        if count < 2 or first is None or last is None or last <= first:
            return 0.0
        return (count - 1) / ((last - first) / 1000.0)

    def summary(self) -> dict:
        return {
            "input_fps": self._fps(self.frames_in, self.first_in_ms, self.last_in_ms),
            "output_fps": self._fps(self.frames_out, self.first_out_ms, self.last_out_ms),
            "dropped": self.dropped,
            "mean_latency_ms": statistics.fmean(self.latencies_ms)
            if self.latencies_ms
            else 0.0,
            "median_latency_ms": statistics.median(self.latencies_ms)
            if self.latencies_ms
            else 0.0,
        }


class Pipeline:
    """unproject -> downsample -> pack, with timestamp throttling in front.

    Latency is real processing time per frame; admission is by timestamp.
    """

    def __init__(self, target_fps: float = 20.0, stride: int = 2):
        self.throttle = Throttle(target_fps)
        self.stride = stride
        self.metrics = PipelineMetrics()
        self._frame_id = 0

    def process(self, frame: DepthFrame) -> Optional[tuple[int, bytes]]:
        self.metrics.record_in(frame.timestamp_ms)
        if not self.throttle.admit(frame.timestamp_ms):
            self.metrics.record_drop()
            return None
        start = time.perf_counter()
        cloud = depth_to_points(frame, frame_id=self._frame_id)
        cloud = downsample_stride(cloud, self.stride)
        packed = pack_points(cloud)
        latency_ms = (time.perf_counter() - start) * 1000.0
        self.metrics.record_out(frame.timestamp_ms, latency_ms)
        self._frame_id += 1
        return self._frame_id - 1, packed


# ---------------------------------------------------------------------------
# Synthetic frames and the recording file format


def synthetic_frame(
    pattern: str = "person",
    width: int = DEFAULT_WIDTH,
    height: int = DEFAULT_HEIGHT,
    seed: int = 0,
    timestamp_ms: int = 0,
) -> DepthFrame:
    """Deterministic stand-in for a depth camera: a flat wall, a sphere, or
    a noisy person-like silhouette in front of a wall."""
    fx = fy = 500.0
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    rng = np.random.default_rng(seed)
    u, v = np.meshgrid(np.arange(width), np.arange(height))
    if pattern == "wall":
        depth = np.full((height, width), 2000, dtype=np.uint16)
        color = np.full((height, width, 3), 180, dtype=np.uint8)
    elif pattern == "sphere":
        r = min(width, height) // 3
        d2 = (u - cx) ** 2 + (v - cy) ** 2
        inside = d2 < r * r
        bulge = np.zeros((height, width))
        bulge[inside] = np.sqrt(r * r - d2[inside]) / r * 300.0
        depth = np.where(inside, 1500 - bulge, 0).astype(np.uint16)
        color = np.zeros((height, width, 3), dtype=np.uint8)
        color[..., 2] = np.where(inside, 200, 0)
    elif pattern == "person":
        depth = np.full((height, width), 2500, dtype=np.uint16)
        torso = (np.abs(u - cx) < width * 0.12) & (v > height * 0.35)
        head = ((u - cx) ** 2 + (v - height * 0.22) ** 2) < (height * 0.09) ** 2
        body = torso | head
        noise = rng.integers(-20, 21, size=(height, width))
        depth = np.where(body, 1200 + noise, depth).astype(np.uint16)
        color = np.full((height, width, 3), 60, dtype=np.uint8)
        color[body] = (200, 150, 120)
    else:
        raise PointCloudError(f"unknown pattern: {pattern}")
    return DepthFrame(
        width=width,
        height=height,
        depth=depth.reshape(-1),
        color=color.reshape(-1),
        fx=fx,
        fy=fy,
        cx=cx,
        cy=cy,
        timestamp_ms=timestamp_ms,
    )


def write_recording(path: str | Path, frames: Iterable[DepthFrame]) -> int:
    """Binary recording: one header, then per-frame timestamp+depth+color.

    All frames must share dimensions and intrinsics. Returns frame count.
    """
    frames = list(frames)
    count = 0
    with open(path, "wb") as fh:
        if not frames:
            fh.write(
                RECORDING_MAGIC_STRUCT.pack(
                    DEFAULT_WIDTH,
                    DEFAULT_HEIGHT,
                    500.0,
                    500.0,
                    (DEFAULT_WIDTH - 1) / 2.0,
                    (DEFAULT_HEIGHT - 1) / 2.0,
                )
            )
            return 0
        first = frames[0]
        fh.write(
            RECORDING_MAGIC_STRUCT.pack(
                first.width, first.height, first.fx, first.fy, first.cx, first.cy
            )
        )
        for frame in frames:
            if (frame.width, frame.height) != (first.width, first.height):
                raise PointCloudError("all frames must share dimensions")
            fh.write(FRAME_TS_STRUCT.pack(frame.timestamp_ms))
            fh.write(frame.depth.astype("<u2").tobytes())
            fh.write(frame.color.tobytes())
            count += 1
    return count


def read_recording(path: str | Path) -> Iterator[DepthFrame]:
    with open(path, "rb") as fh:
        head = fh.read(RECORDING_MAGIC_STRUCT.size)
        if not head:
            return
        if len(head) < RECORDING_MAGIC_STRUCT.size:
            raise PointCloudError("truncated recording header")
        width, height, fx, fy, cx, cy = RECORDING_MAGIC_STRUCT.unpack(head)
        n = width * height
        depth_bytes, color_bytes = n * 2, n * 3
        while True:
            ts_raw = fh.read(FRAME_TS_STRUCT.size)
            if not ts_raw:
                return
            if len(ts_raw) < FRAME_TS_STRUCT.size:
                raise PointCloudError("truncated frame timestamp")
            (ts,) = FRAME_TS_STRUCT.unpack(ts_raw)
            depth = fh.read(depth_bytes)
            color = fh.read(color_bytes)
            if len(depth) < depth_bytes or len(color) < color_bytes:
                raise PointCloudError("truncated frame payload")
            yield DepthFrame(
                width=width,
                height=height,
                depth=np.frombuffer(depth, dtype="<u2"),
                color=np.frombuffer(color, dtype=np.uint8),
                fx=fx,
                fy=fy,
                cx=cx,
                cy=cy,
                timestamp_ms=ts,
            )


def recording_size_bytes(width: int, height: int, frames: int) -> int:
    per_frame = FRAME_TS_STRUCT.size + width * height * 5
    return RECORDING_MAGIC_STRUCT.size + frames * per_frame
