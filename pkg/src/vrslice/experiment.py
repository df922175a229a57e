"""Scenario runner and metrics pipeline.

Three scenarios share one lockstep loop: ``no_slicing`` (both UEs on the
best-effort slice), ``static`` (a fixed dedicated VR slice) and
``data_driven`` (the xApp owns the VR slice). Every scenario runs a VR
handler for latency estimation; only ``data_driven`` acts on it.

Per second the runner writes one CSV row::

    second,vr_mean_latency_ms,vr_est_latency_ms,vr_bits,be_bits,vr_rbgs

where the client latency of a frame is the end of the TTI in which its last
fragment left the MAC queue minus the frame's generation timestamp.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .ran_sim import (
    DEFAULT_BITS_PER_RBG_PER_TTI,
    DEFAULT_MTU_BITS,
    N_RBGS,
    ChannelModel,
    RanSimulator,
)
from .ric_bridge import CREATE, LOCKSTEP, Nack, RicBridge, SliceControlMsg
from .traffic import (
    Constant,
    Cyclic,
    DelayLine,
    FullBufferSource,
    VrSource,
    VrTrace,
    load_trace,
    synth_vr_trace,
)
from .xapp import (
    CapacityModel,
    Denied,
    FrameEstimate,
    HandlerState,
    SliceHandler,
    SliceRequest,
    XApp,
    calibrate_offset,
)

log = logging.getLogger(__name__)

CSV_HEADER = ("second", "vr_mean_latency_ms", "vr_est_latency_ms", "vr_bits", "be_bits", "vr_rbgs")

NO_SLICING = "no_slicing"
STATIC = "static"
DATA_DRIVEN = "data_driven"

VR_UE = "vr"
BE_UE = "be"
BE_SLICE = "be"
STATIC_SLICE = "vr"

# server -> eNB transport; the part of the end-to-end latency the RAN never sees
DEFAULT_CORE_DELAY_MS = 2


class ExperimentError(Exception):
    pass


class AdmissionDenied(ExperimentError):
    pass


@dataclass(frozen=True)
class Scenario:
    kind: str
    rbgs: Optional[int] = None
    target_ms: float = 10.0
    slack_ms: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in (NO_SLICING, STATIC, DATA_DRIVEN):
            raise ValueError(f"unknown scenario {self.kind!r}")
        if self.kind == STATIC and (self.rbgs is None or not 1 <= self.rbgs <= N_RBGS - 1):
            raise ValueError("static scenario needs rbgs in [1, 24]")

    @classmethod
    def parse(cls, text: str) -> "Scenario":
        """Parse ``no-slicing``, ``static:<rbgs>`` or ``data-driven:<target>[:<slack>]``."""
        parts = text.strip().split(":")
        name = parts[0].replace("-", "_")
        try:
            if name == NO_SLICING and len(parts) == 1:
                return cls(NO_SLICING)
            if name == STATIC and len(parts) == 2:
                return cls(STATIC, rbgs=int(parts[1]))
            if name == DATA_DRIVEN and len(parts) in (2, 3):
                slack = float(parts[2]) if len(parts) == 3 else 1.0
                return cls(DATA_DRIVEN, target_ms=float(parts[1]), slack_ms=slack)
        except ValueError as exc:
            raise ValueError(f"bad scenario {text!r}: {exc}") from None
        raise ValueError(f"bad scenario {text!r}")

    @property
    def tag(self) -> str:
        if self.kind == STATIC:
            return f"static-{self.rbgs}"
        if self.kind == DATA_DRIVEN:
            return f"data-driven-{self.target_ms:g}-{self.slack_ms:g}"
        return "no-slicing"


@dataclass
class ExperimentConfig:
    scenario: Scenario
    duration_s: int = 420
    seed: int = 0
    channel_mean_bits: float = DEFAULT_BITS_PER_RBG_PER_TTI
    channel_variation: float = 0.1
    # "synth" (cyclic default), "synth-constant", or a CSV trace path
    trace: str = "synth"
    fps: int = 60
    bitrate_bps: float = 10e6
    cyclic_amplitude: float = 0.35
    cyclic_period_s: float = 150.0
    core_delay_ms: int = DEFAULT_CORE_DELAY_MS
    mtu_bits: int = DEFAULT_MTU_BITS
    strict_isolation: bool = True
    calibration_s: int = 5
    step_rbgs: int = 1
    headroom_rbgs: int = 2
    hop_ms: int = 1000
    bridge_mode: str = LOCKSTEP
    transport_delay_ms: int = 5
    out_dir: str = "results"

    def __post_init__(self) -> None:
        if isinstance(self.scenario, str):
            self.scenario = Scenario.parse(self.scenario)
        elif isinstance(self.scenario, dict):
            self.scenario = Scenario(**self.scenario)
        if self.duration_s < 60:
            raise ValueError("duration_s must be >= 60")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        obj = json.loads(text)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    def build_trace(self) -> VrTrace:
        if self.trace == "synth":
            return synth_vr_trace(
                self.fps, self.bitrate_bps,
                Cyclic(self.cyclic_amplitude, self.cyclic_period_s),
                seed=self.seed, duration_s=self.duration_s,
            )
        if self.trace == "synth-constant":
            return synth_vr_trace(self.fps, self.bitrate_bps, Constant(), self.seed, self.duration_s)
        return load_trace(self.trace)


@dataclass
class MetricsRow:
    second: int
    vr_mean_latency_ms: float
    vr_est_latency_ms: float
    vr_bits: int
    be_bits: int
    vr_rbgs: int

    def as_csv(self) -> List[str]:
        return [
            str(self.second), _fmt(self.vr_mean_latency_ms), _fmt(self.vr_est_latency_ms),
            str(self.vr_bits), str(self.be_bits), str(self.vr_rbgs),
        ]


def _fmt(x: float) -> str:
    return "nan" if x is None or math.isnan(x) else f"{x:.4f}"


@dataclass
class RunResult:
    config: ExperimentConfig
    rows: List[MetricsRow]
    offset_ms: float
    # per-frame ground truth, keyed by frame index
    frame_latency_ms: Dict[int, float]
    control_log: list = field(default_factory=list)
    telemetry: list = field(default_factory=list)
    starved: list = field(default_factory=list)


def _match_frames(
    detected: Sequence[FrameEstimate],
    arrivals: Sequence[int],
    latencies: Mapping[int, float],
) -> Tuple[List[float], List[float]]:
    """Pair each detected frame with the latest frame that reached the eNB by its start."""
    est, truth = [], []
    used = set()
    for f in detected:
        i = bisect_right(arrivals, f.start_ms) - 1
        if i < 0 or i in used or i not in latencies:
            continue
        used.add(i)
        est.append(f.transmission_ms)
        truth.append(latencies[i])
    return est, truth


def simulate(cfg: ExperimentConfig) -> RunResult:
    """Run one scenario in lockstep and return per-second metrics."""
    trace = cfg.build_trace()
    fps = trace.fps
    channel = ChannelModel(cfg.channel_mean_bits, cfg.channel_variation, cfg.seed)
    sim = RanSimulator([VR_UE, BE_UE], channel, best_effort_id=BE_SLICE,
                       strict_isolation=cfg.strict_isolation)
    bridge = RicBridge(sim, mode=cfg.bridge_mode, transport_delay_ms=cfg.transport_delay_ms)
    sc = cfg.scenario
    capacity = CapacityModel(per_rbg_bps=cfg.channel_mean_bits * 1000.0)

    xapp: Optional[XApp] = None
    if sc.kind == DATA_DRIVEN:
        xapp = XApp(bridge, capacity, slack_ms=sc.slack_ms, step=cfg.step_rbgs,
                    headroom_rbgs=cfg.headroom_rbgs, hop_ms=cfg.hop_ms)
        verdict = xapp.request_slice(
            SliceRequest(trace.declared_mean_bitrate_bps, fps, sc.target_ms, VR_UE), now_ms=0
        )
        if isinstance(verdict, Denied):
            raise AdmissionDenied(f"slice request denied: {verdict.reason}")
        vr_slice = verdict.slice_id
        handler = xapp.handlers[vr_slice]
    else:
        vr_slice = None
        if sc.kind == STATIC:
            vr_slice = STATIC_SLICE
            reply = bridge.handle_control(
                SliceControlMsg(CREATE, STATIC_SLICE, 0, rbg_count=sc.rbgs, ue_id=VR_UE)
            )
            if isinstance(reply, Nack):
                raise ExperimentError(f"static slice refused: {reply.reason}")
        rbgs = sc.rbgs or 0
        state = HandlerState(vr_slice or "shared", sc.target_ms, fps, rbgs, rbgs, rbgs, sc.slack_ms)
        handler = SliceHandler(state, hop_ms=cfg.hop_ms)
        bridge.subscribe_monitoring(VR_UE, 1, handler.on_sample)
    handler.keep_frames = True

    vr_src = VrSource(trace, VR_UE, cfg.mtu_bits)
    core = DelayLine(cfg.core_delay_ms)
    peak = int(N_RBGS * channel.max_bits_per_rbg)
    be_src = FullBufferSource(BE_UE, peak, cfg.mtu_bits)

    n_s = cfg.duration_s
    total_ms = n_s * 1000
    frames = trace.frames
    frame_ts = [f.timestamp_ms for f in frames]
    arrivals = [t + cfg.core_delay_ms for t in frame_ts]
    remaining = {i: f.size_bits for i, f in enumerate(frames)}
    latency: Dict[int, float] = {}
    vr_bits = [0] * n_s
    be_bits = [0] * n_s
    vr_rbgs = [0] * n_s
    calib_windows = max(1, cfg.calibration_s * 1000 // cfg.hop_ms)
    offset = None

    for t in range(total_ms):
        core.push(t, vr_src.next_arrivals(t))
        for p in core.pop(t):
            sim.enqueue(p)
        for p in be_src.next_arrivals(t, sim.queue_bits(BE_UE)):
            sim.enqueue(p)
        report = sim.step()
        sec = t // 1000
        vr_bits[sec] += report.per_ue_bits_sent[VR_UE]
        be_bits[sec] += report.per_ue_bits_sent[BE_UE]
        for p in report.completed:
            if p.ue_id == VR_UE:
                left = remaining[p.frame_seq] - p.size_bits
                remaining[p.frame_seq] = left
                if left == 0:
                    latency[p.frame_seq] = float(t + 1 - frame_ts[p.frame_seq])
        bridge.publish_tti(report)

        if offset is None and len(handler.telemetry) >= calib_windows:
            est, truth = _match_frames(handler.frame_log, arrivals, latency)
            offset = calibrate_offset(est, truth)
            handler.set_offset(offset)
            handler.keep_frames = False
            handler.frame_log.clear()
        if xapp is not None:
            xapp.control_step(t)
        if t % 1000 == 999 and vr_slice is not None:
            vr_rbgs[sec] = bridge.rbgs(vr_slice) if vr_slice in bridge.partition else 0

    # vr_rbgs records the allocation in force at the end of each second, which
    # the simulator applies from the next TTI; shift to what was scheduled.
    if vr_slice is not None:
        first = sc.rbgs if sc.kind == STATIC else handler.telemetry[0].rbgs
        vr_rbgs = [first] + vr_rbgs[:-1]

    lat_by_sec: List[List[float]] = [[] for _ in range(n_s)]
    for i, lat in latency.items():
        s = frame_ts[i] // 1000
        if s < n_s:
            lat_by_sec[s].append(lat)
    est_by_sec = [math.nan] * n_s
    for rec in handler.telemetry:
        end_s = (rec.window_start_ms + handler.window_ms) // 1000 - 1
        if 0 <= end_s < n_s and rec.average_latency_ms is not None:
            est_by_sec[end_s] = rec.average_latency_ms
    rows = [
        MetricsRow(
            s,
            float(np.mean(lat_by_sec[s])) if lat_by_sec[s] else math.nan,
            est_by_sec[s],
            vr_bits[s],
            be_bits[s],
            vr_rbgs[s],
        )
        for s in range(n_s)
    ]
    return RunResult(
        config=cfg,
        rows=rows,
        offset_ms=offset if offset is not None else math.nan,
        frame_latency_ms=latency,
        control_log=list(xapp.sent) if xapp else [],
        telemetry=list(handler.telemetry),
        starved=list(xapp.starved) if xapp else [],
    )


def write_csv(rows: Sequence[MetricsRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow(r.as_csv())
    return path


def read_csv(path: Union[str, Path]) -> List[MetricsRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise ExperimentError(f"{path}: missing or unexpected header")
        rows = [
            MetricsRow(int(r[0]), float(r[1]), float(r[2]), int(r[3]), int(r[4]), int(r[5]))
            for r in reader if r
        ]
    if not rows:
        raise ExperimentError(f"{path}: no data rows")
    return rows


def run_scenario(cfg: ExperimentConfig) -> Path:
    """Simulate ``cfg`` and write ``<out_dir>/<scenario>_seed<seed>.csv`` plus its config."""
    result = simulate(cfg)
    out = Path(cfg.out_dir)
    stem = f"{cfg.scenario.tag}_seed{cfg.seed}"
    path = write_csv(result.rows, out / f"{stem}.csv")
    (out / f"{stem}.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
    return path


# -- summaries ------------------------------------------------------------------

WARMUP_S = 10
QUANTILES = (5, 25, 50, 75, 95)


def nearest_rank(values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * n)-th smallest value."""
    vals = sorted(values)
    if not vals:
        raise ValueError("no values")
    rank = max(1, math.ceil(pct / 100.0 * len(vals)))
    return float(vals[rank - 1])


def _stats(values: Sequence[float]) -> Dict[str, float]:
    vals = [v for v in values if not math.isnan(v)]
    if not vals:
        return {k: math.nan for k in ("mean", "median", "p5", "p25", "p75", "p95")}
    out = {"mean": float(np.mean(vals)), "median": nearest_rank(vals, 50)}
    for q in (5, 25, 75, 95):
        out[f"p{q}"] = nearest_rank(vals, q)
    return out


@dataclass
class RunSummary:
    name: str
    latency: Dict[str, float]
    secondary_mbps: Dict[str, float]
    mean_est_latency_ms: float
    mean_rbgs: float
    seconds: int

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def summarize_rows(rows: Sequence[MetricsRow], name: str = "", warmup_s: int = WARMUP_S) -> RunSummary:
    kept = [r for r in rows if r.second >= warmup_s]
    if not kept:
        raise ExperimentError("no rows after warm-up trimming")
    est = [r.vr_est_latency_ms for r in kept if not math.isnan(r.vr_est_latency_ms)]
    return RunSummary(
        name=name,
        latency=_stats([r.vr_mean_latency_ms for r in kept]),
        secondary_mbps=_stats([r.be_bits / 1e6 for r in kept]),
        mean_est_latency_ms=float(np.mean(est)) if est else math.nan,
        mean_rbgs=float(np.mean([r.vr_rbgs for r in kept])),
        seconds=len(kept),
    )


def summarize(paths: Sequence[Union[str, Path]], warmup_s: int = WARMUP_S) -> List[RunSummary]:
    if not paths:
        raise ExperimentError("at least one CSV is required")
    return [summarize_rows(read_csv(p), Path(p).stem, warmup_s) for p in paths]


def format_summary(summaries: Sequence[RunSummary]) -> str:
    cols = ["run", "lat_mean", "lat_p5", "lat_p25", "lat_med", "lat_p75", "lat_p95",
            "est_mean", "be_mean", "be_p5", "be_med", "be_p95", "rbgs_mean"]
    lines = ["\t".join(cols)]
    for s in summaries:
        L, B = s.latency, s.secondary_mbps
        vals = [L["mean"], L["p5"], L["p25"], L["median"], L["p75"], L["p95"],
                s.mean_est_latency_ms, B["mean"], B["p5"], B["median"], B["p95"], s.mean_rbgs]
        lines.append("\t".join([s.name] + [f"{v:.3f}" for v in vals]))
    return "\n".join(lines)


def gain_percent(data_driven_mbps: float, static_mbps: float) -> float:
    """Relative secondary-bitrate gain of data-driven over static, in percent."""
    return (data_driven_mbps / static_mbps - 1.0) * 100.0


@dataclass
class Comparison:
    comparable: bool
    static_rbgs: Optional[int] = None
    data_driven_latency_ms: float = math.nan
    static_latency_ms: float = math.nan
    data_driven_mbps: float = math.nan
    static_mbps: float = math.nan
    gain_pct: float = math.nan
    reason: str = ""

    def report(self) -> str:
        if not self.comparable:
            return f"not comparable: {self.reason}"
        return (
            f"data-driven mean latency {self.data_driven_latency_ms:.2f} ms; "
            f"latency-equivalent static allocation {self.static_rbgs} RBGs "
            f"({self.static_latency_ms:.2f} ms); secondary bitrate "
            f"{self.data_driven_mbps:.2f} vs {self.static_mbps:.2f} Mbit/s "
            f"-> {self.gain_pct:+.1f}%"
        )


def compare_static_equivalent(
    data_driven: RunSummary, sweep: Mapping[int, RunSummary], min_points: int = 4
) -> Comparison:
    """Smallest static allocation at least as fast as data-driven, and the bitrate gain."""
    dd_lat = data_driven.latency["mean"]
    base = Comparison(False, data_driven_latency_ms=dd_lat,
                      data_driven_mbps=data_driven.secondary_mbps["mean"])
    if len(sweep) < min_points:
        base.reason = f"sweep has {len(sweep)} allocations, need {min_points}"
        return base
    ok = sorted(r for r, s in sweep.items() if s.latency["mean"] <= dd_lat)
    worse = [r for r, s in sweep.items() if s.latency["mean"] > dd_lat]
    if not ok or not worse:
        base.reason = "sweep does not bracket the data-driven latency"
        return base
    r = ok[0]
    st = sweep[r]
    return Comparison(
        True, r, dd_lat, st.latency["mean"], data_driven.secondary_mbps["mean"],
        st.secondary_mbps["mean"],
        gain_percent(data_driven.secondary_mbps["mean"], st.secondary_mbps["mean"]),
    )


def sweep_from_dir(sweep_dir: Union[str, Path], warmup_s: int = WARMUP_S) -> Dict[int, RunSummary]:
    """Summaries of every static run in a directory, keyed by its RBG count."""
    out: Dict[int, RunSummary] = {}
    for p in sorted(Path(sweep_dir).glob("*.csv")):
        rows = read_csv(p)
        rbgs = {r.vr_rbgs for r in rows}
        if len(rbgs) != 1 or 0 in rbgs:
            continue
        out[rbgs.pop()] = summarize_rows(rows, p.stem, warmup_s)
    return out
