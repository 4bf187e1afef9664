"""Multi-method comparisons and search convergence traces on matched seeds."""
from __future__ import annotations

import math
from typing import Dict, List, Optional

import numpy as np

from . import search
from .env import Schedule
from .runtime import (
    EpisodeConfig,
    Environment,
    SlotRecord,
    aggregate_metrics,
    run_baseline,
    run_episode,
)


def eval_slots(episode: EpisodeConfig, window: int) -> range:
    """The last ``window`` slots of the episode."""
    return range(max(episode.total_slots - window, 0), episode.total_slots)


def anneal_kwargs(budgets) -> dict:
    return {"t_max": budgets.sa_t_max, "t_min": budgets.sa_t_min, "cooling": budgets.sa_cooling,
            "moves": budgets.sa_moves}


def method_records(method: str, episode: EpisodeConfig, seed: int, window: int, budgets) -> List[SlotRecord]:
    """Per-slot records of ``method`` on the evaluation window.

    FRES trains over the whole episode; baselines only replay the window.
    """
    slots = eval_slots(episode, window)
    if method == "fres":
        return run_episode(episode, seed).records[slots.start:slots.stop]
    return run_baseline(method, episode, seed, slots, search_iters=budgets.ts_iters, anneal=anneal_kwargs(budgets))


def search_trace(method: str, episode: EpisodeConfig, seed: int, budgets, slot: int = 0,
                 iterations: Optional[int] = None) -> List[float]:
    """Best-so-far energy per iteration of one search method.

    Every method starts from the same random schedule on the same slot.
    Taboo searches run ``iterations`` iterations (default: the TS budget);
    annealers run their full cooling schedule, one point per temperature.
    """
    env = Environment(episode, seed)
    env.deploy(episode.uavs_at(slot))
    sc, ch = env.slot(slot)
    rng = np.random.default_rng([seed, 0x7ACE, slot])
    m, n = sc.active_uav_count, sc.n_ues
    x0 = Schedule(rng.integers(0, m + 1, n), rng.uniform(0.0, 1.0, n))
    iters = budgets.ts_iters if iterations is None else iterations
    if method == "ts":
        res = search.ts(x0, sc, ch, max_iter=iters, seed=seed, polish=False)
    elif method == "lts":
        res = search.lts(x0, sc, ch, max_iter=iters, seed=seed, polish=False)
    elif method == "sa":
        res = search.sa(x0, sc, ch, seed=seed, polish=False, **anneal_kwargs(budgets))
    elif method == "asa":
        res = search.asa(x0, sc, ch, seed=seed, polish=False, **anneal_kwargs(budgets))
    else:
        raise ValueError(f"{method!r} is not a search method")
    return [float(p["best"]) for p in res.trace]


def iterations_to_within(trace: List[float], rel: float = 0.01) -> int:
    """First iteration whose best-so-far is within ``rel`` of the final value."""
    final = trace[-1]
    for k, v in enumerate(trace):
        if v <= final * (1.0 + rel):
            return k
    return len(trace) - 1


def compare(methods, episode: EpisodeConfig, seeds, window: int, budgets, progress=None) -> dict:
    """Mean/STD rows and convergence traces for every method."""
    rows, traces = [], {}
    for method in methods:
        sets = []
        for seed in seeds:
            sets.append(method_records(method, episode, seed, window, budgets))
            if progress is not None:
                progress(method, seed)
        met = aggregate_metrics(sets)
        rows.append({
            "method": method,
            "seeds": len(seeds),
            "slots": len(sets[0]),
            "mean_energy_j": met.mean_j,
            "std_energy_j": met.std_j,
            "mean_reward": float(np.mean(met.reward_curve)) if met.reward_curve else math.nan,
            "executed_violations": int(sum(r.executed_violations for rs in sets for r in rs)),
        })
        if method in ("ts", "lts", "sa", "asa"):
            per_seed = [search_trace(method, episode, s, budgets) for s in seeds]
            traces[method] = [float(v) for v in np.mean(per_seed, axis=0)]
        else:
            traces[method] = met.energy_curve
    return {"rows": rows, "traces": traces}
