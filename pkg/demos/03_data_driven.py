# %% [markdown]
# Data-driven slicing: the xApp estimates VR latency from MAC samples once per
# second and nudges the slice up or down by one RBG to stay near 10 ms.

# %%
import sys

from vrslice.experiment import (
    ExperimentConfig,
    Scenario,
    compare_static_equivalent,
    simulate,
    summarize_rows,
)

duration = int(sys.argv[1]) if len(sys.argv) > 1 else 420
res = simulate(ExperimentConfig(Scenario.parse("data-driven:10:1"), duration_s=duration, seed=0))
print(f"calibrated offset {res.offset_ms:.2f} ms")

# %%
# allocation and latency every 15 s; the cyclic surge peaks near 75, 225 and 375 s
for row in res.rows[::15]:
    print(f"t={row.second:3d}s  rbgs={row.vr_rbgs:2d}  "
          f"latency={row.vr_mean_latency_ms:6.2f}  estimate={row.vr_est_latency_ms:6.2f}  "
          f"be={row.be_bits / 1e6:5.2f} Mbit/s")

# %%
dd = summarize_rows(res.rows, "data-driven")
sweep = {}
for r in (10, 12, 15, 17, 18, 20):
    static = simulate(ExperimentConfig(Scenario.parse(f"static:{r}"), duration_s=duration, seed=0))
    sweep[r] = summarize_rows(static.rows, f"static-{r}")
print(compare_static_equivalent(dd, sweep).report())
