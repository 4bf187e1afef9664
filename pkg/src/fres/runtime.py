"""Online loop: inference, refinement, replay training and UAV-count changes.

Per timeslot the agent schedules every UE from its own state, the
schedule is repaired and executed, and (depending on the refinement
mode) LTS improves the action into training labels for the replay pool.
Baselines replay the same task stream and the same UAV deployment.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import agent as ag
from . import search
from .channel import apply_fading, build_channel_set
from .env import (
    ScenarioConfig,
    Schedule,
    check_constraints,
    config_from_dict,
    config_to_dict,
    generate_scenario,
    min_energy_allocation,
    place_uavs,
    repair_allocation,
    sample_tasks,
    task_stream_rng,
    total_energy,
)
from .errors import ConfigError

REFINE_MODES = ("always", "on-violation", "every-k")
BASELINES = ("random", "local", "remote", "ts", "lts", "sa", "asa")


@dataclass
class EpisodeConfig:
    n_ues: int = 10
    total_slots: int = 1000
    # (first slot, UAV count) pairs, slots strictly increasing and starting at 0
    uav_schedule: list = field(default_factory=lambda: [(0, 2)])
    refine_mode: str = "always"
    refine_every: int = 1
    train_per_slot: int = 1
    batch_size: int = 64
    xi: float = 1.0
    lr: float = 1e-3
    buffer_capacity: int = 1024
    priority_exponent: float = 0.6
    lts_iters: int = 10
    lts_neighborhood: int = 20
    taboo_len: int = 5
    agent: str = "multitask"
    fraction_scale: str = "log"
    fading: bool = False
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)

    def __post_init__(self):
        self.uav_schedule = [tuple(int(v) for v in p) for p in self.uav_schedule]
        if self.refine_mode not in REFINE_MODES:
            raise ConfigError(f"refine_mode must be one of {REFINE_MODES}")
        if self.agent not in ag.AGENT_KINDS:
            raise ConfigError(f"agent must be one of {tuple(ag.AGENT_KINDS)}")
        if self.total_slots < 0 or self.n_ues < 1:
            raise ConfigError("need total_slots >= 0 and n_ues >= 1")
        if self.refine_every < 1 or self.batch_size < 1 or self.train_per_slot < 0:
            raise ConfigError("refine_every and batch_size must be >= 1, train_per_slot >= 0")
        if not self.uav_schedule or self.uav_schedule[0][0] != 0:
            raise ConfigError("uav_schedule must start at slot 0")
        slots = [s for s, _ in self.uav_schedule]
        if any(b <= a for a, b in zip(slots, slots[1:])):
            raise ConfigError("uav_schedule slots must be strictly increasing")
        for _, m in self.uav_schedule:
            if not 1 <= m <= self.scenario.max_uavs:
                raise ConfigError(f"UAV count {m} outside [1, {self.scenario.max_uavs}]")
            if m > self.n_ues:
                raise ConfigError("more UAVs than UEs")

    def uavs_at(self, slot: int) -> int:
        m = self.uav_schedule[0][1]
        for s, k in self.uav_schedule:
            if s <= slot:
                m = k
        return m

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenario"] = config_to_dict(self.scenario)
        d["uav_schedule"] = [list(p) for p in self.uav_schedule]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeConfig":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown episode keys: {sorted(unknown)}")
        if "scenario" in d:
            d["scenario"] = config_from_dict(d["scenario"])
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:10]


@dataclass
class SlotRecord:
    slot: int
    m: int
    local_j: float
    transmit_j: float
    remote_j: float
    hover_j: float
    total_j: float
    reward: float
    l_ce: float = math.nan
    l_mse: float = math.nan
    l_mt: float = math.nan
    refined: bool = False
    refined_j: float = math.nan
    search_evals: int = 0
    raw_violations: int = 0
    executed_violations: int = 0
    wall_s: float = 0.0


CSV_COLUMNS = [
    "slot", "m", "local_j", "transmit_j", "remote_j", "hover_j", "total_j", "reward",
    "l_ce", "l_mse", "l_mt", "refined", "refined_j", "search_evals", "raw_violations", "executed_violations",
]


def _record(slot, m, scenario, schedule, channels) -> SlotRecord:
    e = total_energy(scenario, schedule, channels)
    rep = check_constraints(scenario, schedule)
    total = e.total_j
    return SlotRecord(
        slot, m, float(e.local_j.sum()), float(e.transmit_j.sum()), float(e.remote_j.sum()),
        float(e.hover_weight * e.hover_j.sum()), total, 1.0 / total,
        executed_violations=0 if rep.capacity_ok else len(rep.violations()),
    )


class Environment:
    """UE layout fixed per episode; UAVs redeployed whenever their count
    changes; tasks drawn from a per-slot stream."""

    def __init__(self, config: EpisodeConfig, seed: int):
        self.config = config
        self.seed = seed
        m0 = config.uavs_at(0)
        self.base = generate_scenario(seed, config.n_ues, m0, config.scenario)
        self.m = None
        self.channels = None
        self.scenario = None
        self.deployments = 0

    def deploy(self, m: int) -> bool:
        """Place ``m`` UAVs and rebuild channels if the count changed."""
        if m == self.m:
            return False
        uavs = place_uavs(self.base.ue_positions, m, self.config.scenario, seed=self.seed)
        self.scenario = self.base.with_uavs(uavs)
        self.channels = build_channel_set(self.scenario)
        self.m = m
        self.deployments += 1
        return True

    def slot(self, t: int):
        """Scenario and channels of slot ``t`` (tasks and optional fading)."""
        rng = task_stream_rng(self.seed, t)
        data, cyc = sample_tasks(rng, self.config.n_ues, self.config.scenario)
        sc = self.scenario.with_tasks(data, cyc)
        ch = self.channels
        if self.config.fading:
            ch = apply_fading(ch, rng, self.config.scenario.constants)
        return sc, ch


@dataclass
class EpisodeResult:
    records: List[SlotRecord]
    agent: object
    pool: ag.ReplayBufferPool
    adjustments: int = 0
    deployments: int = 0


def run_episode(config: EpisodeConfig, seed: int = 0, progress=None, hook=None) -> EpisodeResult:
    """Run the online loop for ``config.total_slots`` slots.

    ``progress(record)`` and ``hook(t, agent, pool, scenario, channels,
    executed)`` are called at the end of every slot.
    """
    m_max = config.scenario.max_uavs
    env = Environment(config, seed)
    agent = ag.make_agent(config.agent, m_max, config.uavs_at(0), lr=config.lr, seed=seed,
                          fraction_scale=config.fraction_scale)
    pool = ag.ReplayBufferPool(config.buffer_capacity)
    rng = np.random.default_rng([seed, 0x5EED])
    records = []
    adjustments = 0
    for t in range(config.total_slots):
        t0 = time.perf_counter()
        m = config.uavs_at(t)
        if m != agent.m:
            agent.progressive_adjust(pool, m)
            adjustments += 1
        env.deploy(m)
        sc, ch = env.slot(t)
        states = ag.encode_states(sc, ch, m_max)
        assoc, frac = agent.act(states, m)
        action = Schedule(assoc, frac)
        raw = check_constraints(sc, action)
        executed = repair_allocation(sc, action)
        rec = _record(t, m, sc, executed, ch)
        rec.raw_violations = 0 if raw.capacity_ok else len(raw.violations())
        if config.refine_mode == "always":
            refine = True
        elif config.refine_mode == "on-violation":
            refine = not raw.capacity_ok
        else:
            refine = t % config.refine_every == 0
        if refine:
            res = search.lts(
                action, sc, ch, max_iter=config.lts_iters, taboo_len=config.taboo_len,
                nbhd_size=config.lts_neighborhood, seed=[seed, t],
            )
            rec.refined = True
            rec.refined_j = res.energy
            rec.search_evals = res.evaluations
            buf = pool.buffer(m)
            for i in range(sc.n_ues):
                buf.append(ag.Transition(states[i], int(res.schedule.association[i]), float(res.schedule.allocation[i])))
            losses = []
            for _ in range(config.train_per_slot):
                batch = buf.sample(config.batch_size, rng, config.priority_exponent)
                if batch is None:
                    break
                l_ce, l_mse, l_mt, per = agent.train_step(batch, config.xi)
                ag.update_priorities(batch, per)
                losses.append((l_ce, l_mse, l_mt))
            if losses:
                rec.l_ce, rec.l_mse, rec.l_mt = (float(v) for v in np.mean(losses, axis=0))
        rec.wall_s = time.perf_counter() - t0
        records.append(rec)
        if progress is not None:
            progress(rec)
        if hook is not None:
            hook(t, agent, pool, sc, ch, executed)
    return EpisodeResult(records, agent, pool, adjustments, env.deployments)


def _nearest_uav(scenario) -> np.ndarray:
    d = np.linalg.norm(scenario.ue_positions[:, None, :] - scenario.uav_positions[None, :, :], axis=2)
    return np.argmin(d, axis=1) + 1


def baseline_schedule(kind: str, sc, ch, rng, search_iters: int = 90, anneal: Optional[dict] = None) -> Schedule:
    """One slot's schedule for a baseline method.

    Search baselines start from a uniformly random schedule; ``anneal``
    holds keyword overrides for ``sa`` and ``asa``.
    """
    m = sc.active_uav_count
    n = sc.n_ues
    if kind == "local":
        return min_energy_allocation(sc, np.zeros(n, np.int64), ch)
    if kind == "remote":
        return min_energy_allocation(sc, _nearest_uav(sc), ch)
    if kind == "random":
        return min_energy_allocation(sc, rng.integers(0, m + 1, n), ch)
    if kind in ("ts", "lts"):
        x0 = Schedule(rng.integers(0, m + 1, n), rng.uniform(0.0, 1.0, n))
        fn = search.ts if kind == "ts" else search.lts
        return fn(x0, sc, ch, max_iter=search_iters, seed=rng).schedule
    if kind in ("sa", "asa"):
        x0 = Schedule(rng.integers(0, m + 1, n), rng.uniform(0.0, 1.0, n))
        fn = search.sa if kind == "sa" else search.asa
        return fn(x0, sc, ch, seed=rng, **(anneal or {})).schedule
    raise ConfigError(f"unknown baseline {kind!r}; choose from {BASELINES}")


def run_baseline(kind: str, config: EpisodeConfig, seed: int = 0, slots: Optional[Sequence[int]] = None,
                 search_iters: int = 90, anneal: Optional[dict] = None) -> List[SlotRecord]:
    """Replay the episode's task stream with a fixed rule instead of the agent."""
    if kind not in BASELINES:
        raise ConfigError(f"unknown baseline {kind!r}; choose from {BASELINES}")
    env = Environment(config, seed)
    slots = range(config.total_slots) if slots is None else slots
    out = []
    for t in slots:
        t0 = time.perf_counter()
        m = config.uavs_at(t)
        env.deploy(m)
        sc, ch = env.slot(t)
        rng = np.random.default_rng([seed, 0xBA5E, t])
        x = repair_allocation(sc, baseline_schedule(kind, sc, ch, rng, search_iters, anneal))
        rec = _record(t, m, sc, x, ch)
        rec.wall_s = time.perf_counter() - t0
        out.append(rec)
    return out


@dataclass
class Metrics:
    mean_j: float
    std_j: float  # population STD of the per-set mean energies
    slot_std_j: float  # population STD over every per-slot energy
    energy_curve: List[float]
    reward_curve: List[float]
    loss_curve: List[float]


def aggregate_metrics(record_sets: List[List[SlotRecord]], window: Optional[slice] = None) -> Metrics:
    """Mean per-slot total energy over all record sets, its spread across
    sets (one set per seed) and per-slot curves averaged across sets."""
    if not record_sets:
        raise ConfigError("need at least one record set")
    sets = [rs[window] if window is not None else rs for rs in record_sets]
    energies = np.array([[r.total_j for r in rs] for rs in sets], float)
    rewards = np.array([[r.reward for r in rs] for rs in sets], float)
    losses = np.array([[r.l_mt for r in rs] for rs in sets], float)
    flat = energies.ravel()
    with np.errstate(invalid="ignore"):
        loss_curve = [float(v) if np.isfinite(v) else math.nan for v in
                      (np.nanmean(losses, axis=0) if np.isfinite(losses).any() else np.full(losses.shape[1], math.nan))]
    per_set = energies.mean(axis=1) if energies.shape[1] else np.full(len(sets), math.nan)
    return Metrics(
        float(flat.mean()) if flat.size else math.nan,
        float(per_set.std()) if flat.size else math.nan,
        float(flat.std()) if flat.size else math.nan,
        [float(v) for v in energies.mean(axis=0)],
        [float(v) for v in rewards.mean(axis=0)],
        loss_curve,
    )


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".9g")


def records_to_csv(records: List[SlotRecord]) -> str:
    """CSV with the fixed column order of ``CSV_COLUMNS``; wall time is left
    out so that reruns are byte-identical."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        d = asdict(r)
        w.writerow([_fmt(d[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def run_summary(method: str, seed: int, config: EpisodeConfig, records: List[SlotRecord]) -> dict:
    m = aggregate_metrics([records])
    return {
        "method": method,
        "seed": seed,
        "config_hash": config.digest(),
        "slots": len(records),
        "mean_energy_j": m.mean_j,
        "std_energy_j": m.std_j,
        "slot_std_energy_j": m.slot_std_j,
        "mean_reward": float(np.mean([r.reward for r in records])) if records else math.nan,
        "executed_violations": int(sum(r.executed_violations for r in records)),
    }


def output_stem(method: str, seed: int, config: EpisodeConfig) -> str:
    return f"{method}-seed{seed}-{config.digest()}"
