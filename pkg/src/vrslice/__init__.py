"""Data-driven RAN slicing for VR streaming: a TTI-level MAC simulator, a
RIC-style bridge, a latency-steering xApp and an experiment runner."""

from .experiment import ExperimentConfig, MetricsRow, Scenario, run_scenario, simulate, summarize
from .ran_sim import ChannelModel, Packet, RanSimulator, SliceConfig
from .ric_bridge import MacSample, RicBridge, SliceControlMsg
from .traffic import VrTrace, load_trace, synth_vr_trace
from .xapp import SliceRequest, XApp, control_decision, detect_frames

__all__ = [
    "ChannelModel", "ExperimentConfig", "MacSample", "MetricsRow", "Packet", "RanSimulator",
    "RicBridge", "Scenario", "SliceConfig", "SliceControlMsg", "SliceRequest", "VrTrace", "XApp",
    "control_decision", "detect_frames", "load_trace", "run_scenario", "simulate", "summarize",
    "synth_vr_trace",
]
