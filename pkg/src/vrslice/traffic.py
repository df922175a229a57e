"""VR frame-trace playback and full-buffer background traffic.

Trace files are CSV with a ``timestamp_ms,frame_bytes`` header, one frame per
line. Synthetic traces either repeat a constant frame size or modulate it
with a slow raised-cosine load cycle plus per-frame jitter.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .ran_sim import DEFAULT_MTU_BITS, Packet

TRACE_HEADER = ("timestamp_ms", "frame_bytes")


class TraceFormatError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class VrFrame:
    timestamp_ms: int
    size_bits: int


@dataclass(frozen=True)
class Constant:
    pass


@dataclass(frozen=True)
class Cyclic:
    """Slow load cycle: multiplier ``1 - amplitude*cos(2*pi*t/period_s)``."""

    amplitude: float = 0.35
    period_s: float = 150.0
    jitter: float = 0.10


BurstProfile = Union[Constant, Cyclic]


@dataclass
class VrTrace:
    fps: int
    frames: List[VrFrame]
    declared_mean_bitrate_bps: float

    @property
    def duration_ms(self) -> float:
        if not self.frames:
            return 0.0
        return self.frames[-1].timestamp_ms - self.frames[0].timestamp_ms + 1000.0 / self.fps

    def empirical_bitrate_bps(self) -> float:
        """Total frame bits over the playback duration."""
        dur = self.duration_ms
        if dur <= 0:
            return 0.0
        return sum(f.size_bits for f in self.frames) / (dur / 1000.0)

    def validate(self, tolerance: float = 0.10) -> None:
        prev = None
        for i, f in enumerate(self.frames):
            if f.size_bits <= 0 or f.timestamp_ms < 0:
                raise TraceFormatError(f"invalid frame #{i}: {f}")
            if prev is not None and f.timestamp_ms <= prev:
                raise TraceFormatError(f"timestamps not increasing at frame #{i}")
            prev = f.timestamp_ms
        emp = self.empirical_bitrate_bps()
        if abs(emp - self.declared_mean_bitrate_bps) > tolerance * self.declared_mean_bitrate_bps:
            raise TraceFormatError(
                f"empirical bitrate {emp:.0f} bps deviates from declared "
                f"{self.declared_mean_bitrate_bps:.0f} bps by more than {tolerance:.0%}"
            )


def load_trace(
    path: Union[str, Path],
    fps: Optional[int] = None,
    declared_mean_bitrate_bps: Optional[float] = None,
) -> VrTrace:
    """Parse a ``timestamp_ms,frame_bytes`` CSV trace.

    ``fps`` defaults to the rounded inverse of the mean frame spacing and
    the declared bitrate to the empirical one. Errors name the 1-based file
    line (the header is line 1).
    """
    frames: List[VrFrame] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TraceFormatError("empty trace file", 1)
        if tuple(h.strip() for h in header) != TRACE_HEADER:
            raise TraceFormatError(f"expected header {','.join(TRACE_HEADER)!r}", 1)
        prev = None
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise TraceFormatError(f"expected 2 fields, got {len(row)}", line)
            try:
                ts = int(row[0])
                size = int(row[1])
            except ValueError:
                raise TraceFormatError(f"non-integer field in {row!r}", line) from None
            if ts < 0 or size <= 0:
                raise TraceFormatError("timestamp must be >= 0 and size > 0", line)
            if prev is not None and ts <= prev:
                raise TraceFormatError(f"timestamp {ts} not after {prev}", line)
            prev = ts
            frames.append(VrFrame(ts, size * 8))
    if not frames:
        raise TraceFormatError("trace has no frames", 2)
    if fps is None:
        if len(frames) > 1:
            span = frames[-1].timestamp_ms - frames[0].timestamp_ms
            fps = max(1, int(round(1000.0 * (len(frames) - 1) / span)))
        else:
            fps = 1
    trace = VrTrace(fps, frames, 0.0)
    trace.declared_mean_bitrate_bps = (
        trace.empirical_bitrate_bps() if declared_mean_bitrate_bps is None
        else float(declared_mean_bitrate_bps)
    )
    trace.validate()
    return trace


def write_trace(trace: VrTrace, path: Union[str, Path]) -> None:
    """Write ``trace`` in the CSV trace format (sizes rounded to bytes)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(TRACE_HEADER) + "\n")
        for f in trace.frames:
            fh.write(f"{f.timestamp_ms},{int(round(f.size_bits / 8))}\n")


def frame_timestamps(fps: int, n_frames: int) -> List[int]:
    """Integer-ms timestamps at nominal ``1000/fps`` spacing (16/17 ms at 60 fps)."""
    return [int(math.floor(i * 1000.0 / fps + 0.5)) for i in range(n_frames)]


def synth_vr_trace(
    fps: int = 60,
    mean_bitrate_bps: float = 10e6,
    burst_profile: BurstProfile = Constant(),
    seed: int = 0,
    duration_s: int = 420,
) -> VrTrace:
    if fps < 1 or mean_bitrate_bps <= 0 or duration_s < 1:
        raise ValueError("fps >= 1, mean_bitrate_bps > 0 and duration_s >= 1 required")
    n = int(duration_s * fps)
    ts = frame_timestamps(fps, n)
    base = mean_bitrate_bps / fps
    if isinstance(burst_profile, Constant):
        size = max(1, int(round(base)))
        frames = [VrFrame(t, size) for t in ts]
    else:
        rng = np.random.default_rng(seed)
        t_s = np.asarray(ts, dtype=float) / 1000.0
        slow = 1.0 - burst_profile.amplitude * np.cos(2.0 * np.pi * t_s / burst_profile.period_s)
        jit = 1.0 + burst_profile.jitter * rng.uniform(-1.0, 1.0, size=n)
        mult = slow * jit
        # renormalise so the realised mean hits the target regardless of
        # how many cycles fit in the duration
        sizes = np.maximum(1, np.rint(base * mult / mult.mean())).astype(np.int64)
        frames = [VrFrame(t, int(s)) for t, s in zip(ts, sizes.tolist())]
    return VrTrace(fps, frames, float(mean_bitrate_bps))


def fragment(size_bits: int, mtu_bits: int = DEFAULT_MTU_BITS) -> List[int]:
    """Split a frame into MTU-sized fragments; the last one carries the rest."""
    full, rest = divmod(size_bits, mtu_bits)
    return [mtu_bits] * full + ([rest] if rest else [])


class VrSource:
    """Plays back a trace, one call per millisecond."""

    def __init__(self, trace: VrTrace, ue_id: str = "vr", mtu_bits: int = DEFAULT_MTU_BITS) -> None:
        self.trace = trace
        self.ue_id = ue_id
        self.mtu_bits = mtu_bits
        self._next = 0
        self._last_now: Optional[int] = None

    @property
    def exhausted(self) -> bool:
        return self._next >= len(self.trace.frames)

    def next_arrivals(self, now_ms: int) -> List[Packet]:
        if self._last_now is not None and now_ms != self._last_now + 1:
            raise ValueError(f"clock jumped from {self._last_now} to {now_ms}")
        self._last_now = now_ms
        frames = self.trace.frames
        out: List[Packet] = []
        while self._next < len(frames) and frames[self._next].timestamp_ms <= now_ms:
            seq = self._next
            f = frames[seq]
            self._next += 1
            if f.timestamp_ms < now_ms:
                # started mid-trace: frames in the past are never emitted
                continue
            for b in fragment(f.size_bits, self.mtu_bits):
                out.append(Packet(self.ue_id, b, now_ms, seq))
        return out


class FullBufferSource:
    """iperf-style saturating flow.

    Tops the UE queue up to ``min_backlog_bits`` (one TTI at peak capacity)
    every millisecond, so the scheduler never sees it empty.
    """

    def __init__(self, ue_id: str, min_backlog_bits: int, fragment_bits: int = DEFAULT_MTU_BITS) -> None:
        self.ue_id = ue_id
        self.fragment_bits = fragment_bits
        self.min_backlog_bits = min_backlog_bits
        self._seq = 0

    def next_arrivals(self, now_ms: int, queued_bits: int = 0) -> List[Packet]:
        out: List[Packet] = []
        need = self.min_backlog_bits - queued_bits
        while need > 0:
            out.append(Packet(self.ue_id, self.fragment_bits, now_ms, self._seq))
            self._seq += 1
            need -= self.fragment_bits
        return out


class DelayLine:
    """Fixed server-to-eNB transport delay.

    Packets handed in at ``t`` come out at ``t + delay_ms``, re-stamped with
    their arrival time at the base station.
    """

    def __init__(self, delay_ms: int) -> None:
        if delay_ms < 0:
            raise ValueError("delay must be non-negative")
        self.delay_ms = delay_ms
        self._pipe: Dict[int, List[Packet]] = {}

    def push(self, now_ms: int, packets: Sequence[Packet]) -> None:
        if packets:
            self._pipe.setdefault(now_ms + self.delay_ms, []).extend(packets)

    def pop(self, now_ms: int) -> List[Packet]:
        due = self._pipe.pop(now_ms, [])
        if self.delay_ms == 0:
            return due
        return [Packet(p.ue_id, p.size_bits, now_ms, p.frame_seq) for p in due]
