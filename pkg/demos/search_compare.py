"""Taboo search, light taboo search and the two annealers on one slot.

All four start from the same random schedule. Prints the best-so-far
energy at a few iterations and how quickly each got within 1% of its
final value.
"""
from fres import EpisodeConfig
from fres import experiments as X
from fres.config import SearchBudgets

ep = EpisodeConfig(n_ues=10, total_slots=1, uav_schedule=[(0, 2)])
budgets = SearchBudgets()

traces = {k: X.search_trace(k, ep, seed=0, budgets=budgets) for k in ("ts", "lts", "sa", "asa")}
for k, tr in traces.items():
    picks = [tr[i] for i in (0, 5, 10, 30, len(tr) - 1)]
    print(f"{k:>4}", " ".join(f"{v:8.2f}" for v in picks), " within 1% at", X.iterations_to_within(tr))
