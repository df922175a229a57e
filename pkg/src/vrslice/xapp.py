"""Latency-steering slice xApp.

The xApp admits VR slice requests, runs one handler per slice and arbitrates
RBGs between slices. A handler sees nothing but per-millisecond downlink bit
counts for its UE. Once per control interval it

1. cuts the bit series into chunks (runs of non-empty TTIs),
2. splits chunks into video frames using the expected frame count at the
   stream's FPS,
3. estimates each frame's latency as its transmission time plus a
   calibrated offset, and averages over the interval,
4. asks for one RBG more when the average exceeds ``target + slack`` and one
   less when it falls below ``target - slack``.
"""

from __future__ import annotations

import enum
import itertools
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .ran_sim import DEFAULT_BITS_PER_RBG_PER_TTI, N_RBGS
from .ric_bridge import (
    CREATE,
    DELETE,
    REALLOCATE,
    Ack,
    MacSample,
    Nack,
    RicBridge,
    SliceControlMsg,
)

log = logging.getLogger(__name__)

DEFAULT_WINDOW_MS = 1000
DEFAULT_SLACK_MS = 1.0
DEFAULT_HEADROOM_RBGS = 2
DEFAULT_STEP_RBGS = 1
DEFAULT_BE_FLOOR = 1
FRAME_COUNT_TOLERANCE = 2
MIN_CALIBRATION_FRAMES = 30


class XAppError(Exception):
    pass


class CalibrationError(XAppError):
    pass


class Decision(enum.Enum):
    INCREASE = "increase"
    DECREASE = "decrease"
    HOLD = "hold"


@dataclass(frozen=True)
class SliceRequest:
    bitrate_bps: float
    fps: int
    requested_latency_ms: float
    ue_id: str

    def is_valid(self) -> bool:
        return self.bitrate_bps > 0 and self.fps > 0 and self.requested_latency_ms > 0


@dataclass(frozen=True)
class CapacityModel:
    """What admission control knows about the cell."""

    per_rbg_bps: float = DEFAULT_BITS_PER_RBG_PER_TTI * 1000.0
    n_rbgs: int = N_RBGS
    be_floor: int = DEFAULT_BE_FLOOR

    @property
    def max_rbgs(self) -> int:
        return self.n_rbgs - self.be_floor


@dataclass(frozen=True)
class Accepted:
    slice_id: str
    initial_rbgs: int
    min_rbgs: int
    max_rbgs: int


@dataclass(frozen=True)
class Denied:
    reason: str  # "over_capacity" | "invalid_request"


@dataclass
class MacSampleWindow:
    window_start_ms: int
    samples: Sequence[int]

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples)
        if arr.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if arr.size and arr.min() < 0:
            raise ValueError("bit counts must be non-negative")


@dataclass(frozen=True)
class FrameEstimate:
    start_ms: int
    end_ms: int
    size_bits: float
    transmission_ms: float
    est_latency_ms: float

    def with_offset(self, offset_ms: float) -> "FrameEstimate":
        return FrameEstimate(
            self.start_ms, self.end_ms, self.size_bits, self.transmission_ms,
            self.transmission_ms + offset_ms,
        )


@dataclass(frozen=True)
class LatencyEstimate:
    average_latency_ms: float
    frames_observed: int


@dataclass
class HandlerState:
    slice_id: str
    target_ms: float
    fps: int
    current_rbgs: int
    min_rbgs: int
    max_rbgs: int
    slack_ms: float = DEFAULT_SLACK_MS
    offset_ms: float = 0.0
    calibrated: bool = False

    def __post_init__(self) -> None:
        if self.slack_ms <= 0:
            raise ValueError("slack must be positive")
        if not self.min_rbgs <= self.current_rbgs <= self.max_rbgs:
            raise ValueError(
                f"rbgs {self.current_rbgs} outside [{self.min_rbgs}, {self.max_rbgs}]"
            )


@dataclass(frozen=True)
class ControlDecision:
    value: Decision
    average_latency_ms: Optional[float]
    frames_observed: int


# -- admission ------------------------------------------------------------------


def request_slice(
    req: SliceRequest,
    capacity: CapacityModel = CapacityModel(),
    *,
    slice_id: str = "vr",
    headroom_rbgs: int = DEFAULT_HEADROOM_RBGS,
    committed_rbgs: int = 0,
) -> Union[Accepted, Denied]:
    """Admission check: can ``req.bitrate_bps`` be carried by the free RBGs?"""
    if not req.is_valid():
        return Denied("invalid_request")
    available = capacity.max_rbgs - committed_rbgs
    if req.bitrate_bps > available * capacity.per_rbg_bps:
        return Denied("over_capacity")
    min_rbgs = max(1, math.ceil(req.bitrate_bps / capacity.per_rbg_bps))
    initial = min(available, min_rbgs + headroom_rbgs)
    return Accepted(slice_id, initial, min_rbgs, available)


# -- inference ------------------------------------------------------------------


def _chunks(samples: np.ndarray) -> List[Tuple[int, int, float]]:
    """Maximal runs of non-zero samples as (first index, last index, bits)."""
    nz = np.concatenate(([False], samples > 0, [False]))
    edges = np.flatnonzero(np.diff(nz.astype(np.int8)))
    starts, ends = edges[0::2], edges[1::2] - 1
    csum = np.concatenate(([0], np.cumsum(samples, dtype=np.float64)))
    return [
        (int(s), int(e), float(csum[e + 1] - csum[s]))
        for s, e in zip(starts.tolist(), ends.tolist())
    ]


def detect_frames(
    window: MacSampleWindow,
    fps: int,
    tolerance: int = FRAME_COUNT_TOLERANCE,
) -> List[FrameEstimate]:
    """Infer video frames from a per-ms bit series (no offset applied).

    Each chunk first gets ``round(duration / frame_period)`` frames (at least
    one). If the window then holds fewer frames than the FPS predicts (minus
    ``tolerance``), the chunk with the longest per-frame duration is split
    once more, repeatedly, as long as that chunk is long enough for one more
    frame arrival to have fallen inside it.
    """
    if fps < 1:
        raise ValueError("fps must be >= 1")
    samples = np.asarray(window.samples, dtype=np.float64)
    chunks = _chunks(samples)
    if not chunks:
        return []
    period = 1000.0 / fps
    durs = [e - s + 1 for s, e, _ in chunks]
    ks = [max(1, int(math.floor(d / period + 0.5))) for d in durs]
    expected = int(math.floor(len(samples) * fps / 1000.0 + 0.5))
    while sum(ks) < expected - tolerance:
        best = None
        for i, d in enumerate(durs):
            # k+1 frames need k full periods between first and last arrival
            if ks[i] * period <= d - 1:
                key = d / ks[i]
                if best is None or key > best[0]:
                    best = (key, i)
        if best is None:
            break
        ks[best[1]] += 1

    out: List[FrameEstimate] = []
    base = window.window_start_ms
    for (s, e, bits), d, k in zip(chunks, durs, ks):
        tx = d / k
        for j in range(k):
            fs = s + int(math.floor(j * tx))
            fe = s + int(math.floor((j + 1) * tx)) - 1
            out.append(FrameEstimate(base + fs, base + max(fs, fe), bits / k, tx, tx))
    return out


def estimate_average_latency(
    frames: Sequence[FrameEstimate], offset_ms: float
) -> Optional[LatencyEstimate]:
    """Mean of transmission time plus offset; None when no frame was seen."""
    if offset_ms < 0:
        raise ValueError("offset must be non-negative")
    if not frames:
        return None
    avg = sum(f.transmission_ms for f in frames) / len(frames) + offset_ms
    return LatencyEstimate(avg, len(frames))


def calibrate_offset(
    estimated: Sequence[float], ground_truth: Sequence[float]
) -> float:
    """Mean gap between client-measured latency and estimated transmission time."""
    if len(estimated) != len(ground_truth):
        raise CalibrationError(
            f"length mismatch: {len(estimated)} estimates vs {len(ground_truth)} truths"
        )
    if len(estimated) < MIN_CALIBRATION_FRAMES:
        raise CalibrationError(
            f"need at least {MIN_CALIBRATION_FRAMES} frames, got {len(estimated)}"
        )
    return float(np.mean(np.asarray(ground_truth, float) - np.asarray(estimated, float)))


def control_decision(avg: Optional[LatencyEstimate], state: HandlerState) -> ControlDecision:
    if avg is None or avg.frames_observed == 0:
        return ControlDecision(Decision.HOLD, None, 0)
    a = avg.average_latency_ms
    if a > state.target_ms + state.slack_ms:
        value = Decision.INCREASE
    elif a < state.target_ms - state.slack_ms:
        value = Decision.DECREASE
    else:
        value = Decision.HOLD
    return ControlDecision(value, a, avg.frames_observed)


# -- allocation -------------------------------------------------------------------


@dataclass
class AllocationResult:
    messages: List[SliceControlMsg]
    starved: List[str] = field(default_factory=list)


def allocation_controller(
    decisions: Mapping[str, ControlDecision],
    states: Mapping[str, HandlerState],
    epochs: Iterator[int],
    *,
    n_rbgs: int = N_RBGS,
    be_floor: int = DEFAULT_BE_FLOOR,
    step: int = DEFAULT_STEP_RBGS,
) -> AllocationResult:
    """Turn per-slice decisions into reallocation commands.

    Decreases are issued first so the RBGs they free can serve increases.
    Increases are granted in ascending slice-id order while the best-effort
    slice stays above its floor; the rest are logged as starved.
    """
    result = AllocationResult([])
    alloc = {sid: st.current_rbgs for sid, st in states.items()}
    for sid in sorted(decisions):
        if decisions[sid].value is not Decision.DECREASE:
            continue
        st = states[sid]
        new = max(st.min_rbgs, alloc[sid] - step)
        if new != alloc[sid]:
            alloc[sid] = new
            result.messages.append(SliceControlMsg(REALLOCATE, sid, next(epochs), rbg_count=new))
    free = n_rbgs - be_floor - sum(alloc.values())
    for sid in sorted(decisions):
        if decisions[sid].value is not Decision.INCREASE:
            continue
        st = states[sid]
        want = min(st.max_rbgs, alloc[sid] + step)
        grant = min(want - alloc[sid], free)
        if grant <= 0:
            if want > alloc[sid] or alloc[sid] >= st.max_rbgs:
                result.starved.append(sid)
                log.info("slice %s starved at %d RBGs", sid, alloc[sid])
            continue
        alloc[sid] += grant
        free -= grant
        result.messages.append(SliceControlMsg(REALLOCATE, sid, next(epochs), rbg_count=alloc[sid]))
    return result


# -- per-slice handler ------------------------------------------------------------


@dataclass
class TelemetryRecord:
    window_start_ms: int
    average_latency_ms: Optional[float]
    frames_observed: int
    decision: Optional[Decision]
    rbgs: int


class SliceHandler:
    """Collects MacSamples for one UE and evaluates one window per hop."""

    def __init__(
        self,
        state: HandlerState,
        *,
        window_ms: int = DEFAULT_WINDOW_MS,
        hop_ms: Optional[int] = None,
        start_ms: int = 0,
        keep_frames: bool = False,
    ) -> None:
        self.state = state
        self.window_ms = window_ms
        self.hop_ms = hop_ms or window_ms
        self._buf: Deque[int] = deque(maxlen=window_ms)
        self._buf_start = start_ms
        self._next_eval = start_ms + window_ms - 1
        self._expected_tti = start_ms
        self.telemetry: List[TelemetryRecord] = []
        self.keep_frames = keep_frames
        self.frame_log: List[FrameEstimate] = []
        self.pending: List[ControlDecision] = []

    def on_sample(self, sample: MacSample) -> Optional[ControlDecision]:
        if sample.tti_ms != self._expected_tti:
            raise XAppError(f"sample for {sample.tti_ms} ms, expected {self._expected_tti} ms")
        self._expected_tti += 1
        if len(self._buf) == self.window_ms:
            self._buf_start += 1
        self._buf.append(sample.bits_sent)
        if sample.tti_ms == self._next_eval:
            self._next_eval += self.hop_ms
            window = MacSampleWindow(self._buf_start, list(self._buf))
            _, decision = handler_tick(self, window)
            if decision is not None:
                self.pending.append(decision)
            return decision
        return None

    def set_offset(self, offset_ms: float) -> None:
        self.state.offset_ms = max(0.0, offset_ms)
        self.state.calibrated = True

    def take_decision(self) -> Optional[ControlDecision]:
        if not self.pending:
            return None
        d = self.pending[-1]
        self.pending.clear()
        return d


def handler_tick(
    handler: SliceHandler, window: MacSampleWindow
) -> Tuple[HandlerState, Optional[ControlDecision]]:
    """Detect frames, average their latency and decide (only once calibrated)."""
    st = handler.state
    frames = detect_frames(window, st.fps)
    if handler.keep_frames:
        handler.frame_log.extend(frames)
    avg = estimate_average_latency(frames, st.offset_ms)
    decision = control_decision(avg, st) if st.calibrated else None
    handler.telemetry.append(
        TelemetryRecord(
            window.window_start_ms,
            avg.average_latency_ms if avg else None,
            avg.frames_observed if avg else 0,
            decision.value if decision else None,
            st.current_rbgs,
        )
    )
    return st, decision


# -- the xApp ---------------------------------------------------------------------


class XApp:
    """Slice admission, per-slice handlers and the allocation controller."""

    def __init__(
        self,
        bridge: RicBridge,
        capacity: CapacityModel = CapacityModel(),
        *,
        slack_ms: float = DEFAULT_SLACK_MS,
        step: int = DEFAULT_STEP_RBGS,
        headroom_rbgs: int = DEFAULT_HEADROOM_RBGS,
        window_ms: int = DEFAULT_WINDOW_MS,
        hop_ms: Optional[int] = None,
        first_epoch: int = 1,
    ) -> None:
        self.bridge = bridge
        self.capacity = capacity
        self.slack_ms = slack_ms
        self.step = step
        self.headroom_rbgs = headroom_rbgs
        self.window_ms = window_ms
        self.hop_ms = hop_ms
        self.epochs = itertools.count(max(first_epoch, bridge.last_epoch + 1))
        self.handlers: Dict[str, SliceHandler] = {}
        self._subs: Dict[str, int] = {}
        self._ids = itertools.count(1)
        self.sent: List[Tuple[SliceControlMsg, Union[Ack, Nack]]] = []
        self.starved: List[Tuple[int, str]] = []

    def _send(self, msg: SliceControlMsg) -> Union[Ack, Nack]:
        reply = self.bridge.handle_control(msg)
        self.sent.append((msg, reply))
        return reply

    def request_slice(self, req: SliceRequest, *, now_ms: Optional[int] = None) -> Union[Accepted, Denied]:
        committed = sum(h.state.current_rbgs for h in self.handlers.values())
        sid = f"s{next(self._ids)}"
        verdict = request_slice(
            req, self.capacity, slice_id=sid,
            headroom_rbgs=self.headroom_rbgs, committed_rbgs=committed,
        )
        if isinstance(verdict, Denied):
            return verdict
        reply = self._send(
            SliceControlMsg(CREATE, sid, next(self.epochs), rbg_count=verdict.initial_rbgs, ue_id=req.ue_id)
        )
        if isinstance(reply, Nack):
            return Denied("over_capacity")
        state = HandlerState(
            slice_id=sid,
            target_ms=req.requested_latency_ms,
            fps=req.fps,
            current_rbgs=verdict.initial_rbgs,
            min_rbgs=min(verdict.min_rbgs, verdict.initial_rbgs),
            max_rbgs=verdict.max_rbgs,
            slack_ms=self.slack_ms,
        )
        start = now_ms if now_ms is not None else (-1 if self.bridge.last_tti is None else self.bridge.last_tti) + 1
        handler = SliceHandler(state, window_ms=self.window_ms, hop_ms=self.hop_ms, start_ms=start)
        sub = self.bridge.subscribe_monitoring(req.ue_id, 1, handler.on_sample)
        self.handlers[sid] = handler
        self._subs[sid] = sub.sub_id
        return verdict

    def delete_slice(self, slice_id: str) -> Ack:
        if slice_id not in self.handlers:
            raise XAppError(f"unknown slice {slice_id!r}")
        reply = self._send(SliceControlMsg(DELETE, slice_id, next(self.epochs)))
        if isinstance(reply, Nack):
            raise XAppError(f"delete of {slice_id!r} refused: {reply.reason}")
        del self.handlers[slice_id]
        self.bridge.unsubscribe(self._subs.pop(slice_id))
        return reply

    def control_step(self, now_ms: int = -1) -> List[SliceControlMsg]:
        """Gather pending handler decisions and push reallocations to the RIC."""
        decisions = {}
        for sid, h in self.handlers.items():
            d = h.take_decision()
            if d is not None:
                decisions[sid] = d
        if not decisions:
            return []
        states = {sid: h.state for sid, h in self.handlers.items()}
        result = allocation_controller(
            decisions, states, self.epochs,
            n_rbgs=self.capacity.n_rbgs, be_floor=self.capacity.be_floor, step=self.step,
        )
        for sid in result.starved:
            self.starved.append((now_ms, sid))
        for msg in result.messages:
            reply = self._send(msg)
            if isinstance(reply, Ack):
                self.handlers[msg.slice_id].state.current_rbgs = msg.rbg_count
            else:
                log.warning("reallocation nacked: %s", reply.reason)
        return result.messages

    def handle_message(self, obj: dict) -> dict:
        """Control-plane entry point for ``req``/``del`` JSON objects."""
        t = obj.get("t")
        if t == "req":
            try:
                req = SliceRequest(float(obj["bitrate"]), int(obj["fps"]), float(obj["latency_ms"]), str(obj["ue"]))
            except (KeyError, TypeError, ValueError):
                return {"t": "denied", "reason": "invalid_request"}
            v = self.request_slice(req)
            if isinstance(v, Denied):
                return {"t": "denied", "reason": v.reason}
            return {"t": "accepted", "slice": v.slice_id, "rbgs": v.initial_rbgs}
        if t == "del":
            try:
                ack = self.delete_slice(str(obj["slice"]))
            except (KeyError, XAppError) as exc:
                return {"t": "nack", "epoch": -1, "reason": str(exc)}
            return {"t": "ack", "epoch": ack.epoch}
        return {"t": "nack", "epoch": -1, "reason": f"unknown message type {t!r}"}
