# %% [markdown]
# How the xApp sees a VR stream: only per-millisecond bit counts for one UE.
# This walks through turning those counts back into frames.

# %%
import numpy as np

from vrslice.ran_sim import ChannelModel, RanSimulator
from vrslice.traffic import Constant, VrSource, synth_vr_trace
from vrslice.xapp import MacSampleWindow, detect_frames, estimate_average_latency

trace = synth_vr_trace(60, 10e6, Constant(), seed=0, duration_s=2)
sim = RanSimulator(["vr"], ChannelModel(seed=0))
src = VrSource(trace, "vr")

bits = []
for t in range(2000):
    for p in src.next_arrivals(t):
        sim.enqueue(p)
    bits.append(sim.step().per_ue_bits_sent["vr"])
bits = np.array(bits)

# %%
# a frame of ~167 kbit needs about 5 ms of the full carrier
print("first 40 ms:", bits[:40].tolist())

# %%
window = MacSampleWindow(1000, bits[1000:].tolist())
frames = detect_frames(window, fps=60)
print(f"{len(frames)} frames detected in the second window")
print("first three:", [(f.start_ms, f.transmission_ms) for f in frames[:3]])

# %%
# the offset covers everything the RAN cannot see (core delay, processing)
est = estimate_average_latency(frames, offset_ms=2.0)
print(f"estimated mean latency {est.average_latency_ms:.2f} ms over {est.frames_observed} frames")

# %%
# when transmissions abut, a chunk holds several frames
merged = np.zeros(1000, dtype=int)
merged[100:134] = 5000
print([(f.start_ms, f.end_ms, f.transmission_ms) for f in detect_frames(MacSampleWindow(0, merged.tolist()), 60)])
