# %% [markdown]
# Static slicing: a fixed number of RBGs reserved for the VR user while a
# full-buffer flow takes the rest. More RBGs means lower VR latency and less
# left over for the secondary user.

# %%
import sys

from vrslice.experiment import ExperimentConfig, Scenario, format_summary, simulate, summarize_rows

duration = int(sys.argv[1]) if len(sys.argv) > 1 else 420

summaries = []
for scenario in ["no-slicing"] + [f"static:{r}" for r in (10, 12, 15, 17, 18, 20)]:
    res = simulate(ExperimentConfig(Scenario.parse(scenario), duration_s=duration, seed=0))
    summaries.append(summarize_rows(res.rows, scenario))
    print(f"{scenario:>10}: done")

# %%
print(format_summary(summaries))
