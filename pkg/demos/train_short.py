"""A short online run with a UAV joining and leaving.

The agent starts with 2 UAVs, grows to 3 at slot 100 and drops back at
slot 200. Prints mean energy per 50-slot block and compares the last
block against the local-only and TS baselines on the same slots.
"""
import numpy as np

from fres import EpisodeConfig, run_baseline, run_episode

ep = EpisodeConfig(n_ues=8, total_slots=300, uav_schedule=[(0, 2), (100, 3), (200, 2)])
res = run_episode(ep, seed=0)
print("progressive adjustments:", res.adjustments)

e = np.array([r.total_j for r in res.records])
for k in range(0, len(e), 50):
    print(f"slots {k:>3}-{k + 49:<3} m={res.records[k].m}  mean energy {e[k:k + 50].mean():8.2f} J")

window = range(250, 300)
for kind in ("local", "ts"):
    recs = run_baseline(kind, ep, 0, window, search_iters=90)
    print(f"{kind:>5} on last 50 slots: {np.mean([r.total_j for r in recs]):8.2f} J")
print(" fres on last 50 slots:", round(e[250:].mean(), 2), "J")
print("executed violations:", sum(r.executed_violations for r in res.records))
