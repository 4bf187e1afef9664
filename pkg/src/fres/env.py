"""World model: geometry, tasks, the energy model, and constraint handling.

Positions are plain ``(x, y, z)`` arrays in meters. A :class:`Scenario`
stores per-UE quantities as flat arrays so the energy terms of a whole
schedule can be evaluated in a handful of vector operations; the search
module calls :func:`schedule_energy` hundreds of times per timeslot.
"""
from __future__ import annotations

import json
import math
from fractions import Fraction
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import ConfigError, InfeasibleLinkError, InvalidAllocationError

SCENARIO_SCHEMA = "fres.scenario/1"

# Lower bound applied to non-positive allocation fractions by repair.
MIN_FRACTION = 1e-3

LOCAL_MODES = ("full_capacity", "deadline")


@dataclass(frozen=True)
class Task:
    data_bits: float
    cycles: float

    def __post_init__(self):
        if not (self.data_bits > 0 and self.cycles > 0):
            raise ConfigError(f"task sizes must be positive, got {self}")


@dataclass(frozen=True)
class PhysicalConstants:
    """Link, computing and hovering constants.

    ``hover_weight`` scales the hover terms in the objective and
    ``carrier_wavelength_m`` is the radio wavelength; they are unrelated
    quantities despite sharing a symbol in the literature.
    """

    bandwidth_hz: float = 1e6
    noise_power_w: float = 1e-13
    tx_power_w: float = 1.0
    hover_power_w: float = 1.0
    epsilon_ref_loss: float = 1e-3
    alpha_ue_irs: float = 2.8
    nu1: float = 2.5e-26
    nu2: float = 1e-29
    tau1: float = 3.0
    tau2: float = 3.0
    local_cap: float = 1e9
    uav_cap: float = 3e10
    hover_weight: float = 1.0
    carrier_wavelength_m: float = 0.125
    element_spacing_m: float = 0.0625
    phase_levels: int = 8
    elements_per_irs: int = 16

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("nu1", "nu2", "hover_weight"):
                if v < 0:
                    raise ConfigError(f"{f.name} must be >= 0, got {v}")
            elif not v > 0:
                raise ConfigError(f"{f.name} must be > 0, got {v}")
        if self.tau1 < 1 or self.tau2 < 1:
            raise ConfigError("tau1 and tau2 must be >= 1")
        if int(self.phase_levels) != self.phase_levels or int(self.elements_per_irs) != self.elements_per_irs:
            raise ConfigError("phase_levels and elements_per_irs must be integers")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to draw a scenario besides the seed and the counts."""

    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    area_m: tuple = (100.0, 100.0)
    uav_altitude_m: float = 30.0
    irs_altitude_m: float = 15.0
    max_uavs: int = 5
    data_mb_range: tuple = (19.0, 21.0)
    bits_per_mb: float = 8e6
    cycles_range: tuple = (0.95e9, 1.05e9)
    # None disables the completion deadline.
    deadline_s: Optional[float] = None
    local_mode: str = "full_capacity"
    # None means one IRS per UE.
    n_irs: Optional[int] = None
    fcm_fuzzifier: float = 2.0
    fcm_pathloss_exponent: float = 2.0
    fcm_tol_m: float = 1e-4
    fcm_max_iter: int = 100

    def __post_init__(self):
        if self.local_mode not in LOCAL_MODES:
            raise ConfigError(f"local_mode must be one of {LOCAL_MODES}, got {self.local_mode!r}")
        if self.local_mode == "deadline" and self.deadline_s is None:
            raise ConfigError("local_mode='deadline' needs deadline_s")
        if self.deadline_s is not None and self.deadline_s <= 0:
            raise ConfigError("deadline_s must be positive")
        if self.max_uavs < 1:
            raise ConfigError("max_uavs must be >= 1")
        lo, hi = self.data_mb_range
        if not 0 < lo <= hi:
            raise ConfigError("data_mb_range must satisfy 0 < lo <= hi")
        lo, hi = self.cycles_range
        if not 0 < lo <= hi:
            raise ConfigError("cycles_range must satisfy 0 < lo <= hi")

    @property
    def data_bits_range(self):
        return (self.data_mb_range[0] * self.bits_per_mb, self.data_mb_range[1] * self.bits_per_mb)


@dataclass
class Scenario:
    ue_positions: np.ndarray
    data_bits: np.ndarray
    cycles: np.ndarray
    uav_positions: np.ndarray
    irs_positions: np.ndarray
    config: ScenarioConfig = field(default_factory=ScenarioConfig)
    rng_seed: int = 0

    def __post_init__(self):
        self.ue_positions = np.asarray(self.ue_positions, dtype=float).reshape(-1, 3)
        self.uav_positions = np.asarray(self.uav_positions, dtype=float).reshape(-1, 3)
        self.irs_positions = np.asarray(self.irs_positions, dtype=float).reshape(-1, 3)
        self.data_bits = np.asarray(self.data_bits, dtype=float)
        self.cycles = np.asarray(self.cycles, dtype=float)
        n = len(self.ue_positions)
        if self.data_bits.shape != (n,) or self.cycles.shape != (n,):
            raise ConfigError("every UE needs exactly one task")
        if not 1 <= self.active_uav_count <= self.config.max_uavs:
            raise ConfigError(
                f"active UAV count {self.active_uav_count} outside [1, {self.config.max_uavs}]"
            )
        if len(self.irs_positions) < 1:
            raise ConfigError("at least one IRS is required")
        if np.any(self.ue_positions[:, 2] < 0) or np.any(self.uav_positions[:, 2] < 0):
            raise ConfigError("altitudes must be non-negative")

    @property
    def constants(self) -> PhysicalConstants:
        return self.config.constants

    @property
    def n_ues(self) -> int:
        return len(self.ue_positions)

    @property
    def active_uav_count(self) -> int:
        return len(self.uav_positions)

    @property
    def tasks(self) -> list:
        return [Task(float(r), float(f)) for r, f in zip(self.data_bits, self.cycles)]

    def with_tasks(self, data_bits, cycles) -> "Scenario":
        return replace(self, data_bits=np.asarray(data_bits, float), cycles=np.asarray(cycles, float))

    def with_uavs(self, uav_positions) -> "Scenario":
        return replace(self, uav_positions=np.asarray(uav_positions, float))


@dataclass
class Schedule:
    """Joint decision for one timeslot.

    ``association[i]`` is 0 for local execution or ``j`` in ``1..m`` for
    UAV ``j``. ``allocation[i]`` is the granted share of the relevant
    capacity (local CPU or the UAV server).
    """

    association: np.ndarray
    allocation: np.ndarray

    def __post_init__(self):
        self.association = np.asarray(self.association, dtype=np.int64).copy()
        self.allocation = np.asarray(self.allocation, dtype=float).copy()
        if self.association.shape != self.allocation.shape or self.association.ndim != 1:
            raise ConfigError("association and allocation must be 1-D arrays of equal length")

    def copy(self) -> "Schedule":
        return Schedule(self.association, self.allocation)

    def one_hot(self, m: int) -> np.ndarray:
        """``(N, m + 1)`` indicator matrix ``[a_i0, a_i1, ..., a_im]``."""
        out = np.zeros((len(self.association), m + 1), dtype=np.int64)
        out[np.arange(len(self.association)), self.association] = 1
        return out

    def __eq__(self, other):
        return (
            isinstance(other, Schedule)
            and np.array_equal(self.association, other.association)
            and np.array_equal(self.allocation, other.allocation)
        )


@dataclass
class EnergyBreakdown:
    local_j: np.ndarray
    transmit_j: np.ndarray
    remote_j: np.ndarray
    hover_j: np.ndarray
    hover_weight: float

    @property
    def total_j(self) -> float:
        return float(
            self.local_j.sum()
            + self.transmit_j.sum()
            + self.remote_j.sum()
            + self.hover_weight * self.hover_j.sum()
        )


@dataclass
class ConstraintReport:
    association_ok: bool
    local_excess: np.ndarray  # cycles/s above F^L_max, per UE
    uav_excess: np.ndarray  # cycles/s above F^R_max, per UAV
    deadline_excess: np.ndarray  # seconds past the deadline, per UE

    @property
    def capacity_ok(self) -> bool:
        return self.association_ok and not self.local_excess.any() and not self.uav_excess.any()

    @property
    def ok(self) -> bool:
        return self.capacity_ok and not self.deadline_excess.any()

    def violations(self) -> list:
        out = []
        if not self.association_ok:
            out.append("association: every UE must pick exactly one of local or an active UAV")
        for i in np.flatnonzero(self.local_excess):
            out.append(f"local cap: UE {i} over by {self.local_excess[i]:.6g} cycles/s")
        for j in np.flatnonzero(self.uav_excess):
            out.append(f"uav cap: UAV {j + 1} over by {self.uav_excess[j]:.6g} cycles/s")
        for i in np.flatnonzero(self.deadline_excess):
            out.append(f"deadline: UE {i} late by {self.deadline_excess[i]:.6g} s")
        return out


# -- elementary terms -------------------------------------------------------


def distance(p, q) -> float:
    return float(np.linalg.norm(np.asarray(p, float) - np.asarray(q, float)))


def local_energy(alloc: float, task: Task, c: PhysicalConstants) -> float:
    if alloc < 0:
        raise InvalidAllocationError("local allocation must be >= 0")
    if alloc == 0:
        return 0.0
    return c.nu1 * alloc ** (c.tau1 - 1) * task.cycles


def transmit_energy(tx_power: float, data_bits: float, rate: float) -> float:
    if data_bits == 0:
        return 0.0
    if rate <= 0:
        raise InfeasibleLinkError(f"cannot send {data_bits} bits at rate {rate}")
    return tx_power * data_bits / rate


def remote_energy(alloc: float, task: Task, c: PhysicalConstants) -> float:
    if alloc <= 0:
        raise InvalidAllocationError("a remote task needs a positive allocation to finish")
    return c.nu2 * alloc ** (c.tau2 - 1) * task.cycles


def hover_energy(uav_j: int, schedule: Schedule, times, c: PhysicalConstants) -> float:
    """Hover energy of UAV ``uav_j`` (1-based), unweighted.

    ``times`` is a pair of per-UE arrays ``(transmit_s, execute_s)``.
    """
    t_tx, t_ex = (np.asarray(t, float) for t in times)
    assigned = schedule.association == uav_j
    if not assigned.any():
        return 0.0
    return c.hover_power_w * float(np.max(t_tx[assigned] + t_ex[assigned]))


# -- schedule-level evaluation ----------------------------------------------


def _rates_of(channels) -> np.ndarray:
    return np.asarray(getattr(channels, "rates", channels), dtype=float)


def uav_load(association: np.ndarray, allocation: np.ndarray, m: int) -> np.ndarray:
    """Summed allocation fraction per UAV, index ``j - 1``."""
    remote = association > 0
    return np.bincount(association[remote] - 1, weights=allocation[remote], minlength=m)[:m]


def exact_uav_load(association: np.ndarray, allocation: np.ndarray, m: int) -> list:
    """Per-UAV summed fraction as exact rationals (no rounding)."""
    load = [Fraction(0)] * m
    for a, f in zip(association.tolist(), allocation.tolist()):
        if a > 0:
            load[a - 1] += Fraction(f)
    return load


def local_alloc(allocation: np.ndarray, config: ScenarioConfig) -> np.ndarray:
    c = config.constants
    if config.local_mode == "full_capacity":
        return np.full(allocation.shape, c.local_cap)
    return allocation * c.local_cap


def schedule_times(association, allocation, data_bits, cycles, rates, config):
    """Transmission and execution time per UE for its chosen location."""
    n = len(association)
    remote = association > 0
    t_tx = np.zeros(n)
    t_ex = np.empty(n)
    if remote.any():
        r = rates[np.flatnonzero(remote), association[remote] - 1]
        with np.errstate(divide="ignore"):
            t_tx[remote] = data_bits[remote] / r
        t_ex[remote] = cycles[remote] / (allocation[remote] * config.constants.uav_cap)
    loc = ~remote
    with np.errstate(divide="ignore"):
        t_ex[loc] = cycles[loc] / local_alloc(allocation[loc], config)
    return t_tx, t_ex


def schedule_energy(association, allocation, data_bits, cycles, rates, config, m) -> EnergyBreakdown:
    """Vectorized objective terms for one schedule."""
    c = config.constants
    remote = association > 0
    loc = ~remote
    n = len(association)
    e_loc = np.zeros(n)
    e_tx = np.zeros(n)
    e_rem = np.zeros(n)
    hover = np.zeros(m)
    if loc.any():
        f0 = local_alloc(allocation[loc], config)
        e_loc[loc] = np.where(f0 > 0, c.nu1 * f0 ** (c.tau1 - 1) * cycles[loc], 0.0)
    if remote.any():
        idx = np.flatnonzero(remote)
        r = rates[idx, association[idx] - 1]
        if np.any(r <= 0):
            raise InfeasibleLinkError("offloaded over a zero-rate link")
        f = allocation[idx] * c.uav_cap
        if np.any(f <= 0):
            raise InvalidAllocationError("remote allocation must be positive")
        t_tx = data_bits[idx] / r
        e_tx[idx] = c.tx_power_w * t_tx
        e_rem[idx] = c.nu2 * f ** (c.tau2 - 1) * cycles[idx]
        busy = t_tx + cycles[idx] / f
        np.maximum.at(hover, association[idx] - 1, busy)
        hover *= c.hover_power_w
    return EnergyBreakdown(e_loc, e_tx, e_rem, hover, c.hover_weight)


def total_energy(scenario: Scenario, schedule: Schedule, channels) -> EnergyBreakdown:
    return schedule_energy(
        schedule.association,
        schedule.allocation,
        scenario.data_bits,
        scenario.cycles,
        _rates_of(channels),
        scenario.config,
        scenario.active_uav_count,
    )


def check_constraints(scenario: Scenario, schedule: Schedule, channels=None) -> ConstraintReport:
    """Report violations of one-hot association, both capacity limits and
    (when configured and rates are given) the completion deadline."""
    cfg = scenario.config
    c = cfg.constants
    m = scenario.active_uav_count
    a = schedule.association
    f = schedule.allocation
    n = scenario.n_ues
    association_ok = bool(len(a) == n and np.all((a >= 0) & (a <= m)))
    local_excess = np.zeros(n)
    uav_excess = np.zeros(m)
    deadline_excess = np.zeros(n)
    if not association_ok:
        return ConstraintReport(False, local_excess, uav_excess, deadline_excess)
    loc = a == 0
    demand = local_alloc(f[loc], cfg)
    local_excess[loc] = np.maximum(demand - c.local_cap, 0.0)
    load = uav_load(a, f, m)
    exact = exact_uav_load(a, f, m)
    over = np.array([x > 1 for x in exact], bool)
    # an exact overshoot that rounds away still counts, as at least one ulp
    uav_excess = np.where(over, np.maximum((load - 1.0) * c.uav_cap, np.spacing(c.uav_cap)), 0.0)
    if cfg.deadline_s is not None and channels is not None:
        t_tx, t_ex = schedule_times(a, f, scenario.data_bits, scenario.cycles, _rates_of(channels), cfg)
        deadline_excess = np.maximum(t_tx + t_ex - cfg.deadline_s, 0.0)
    return ConstraintReport(association_ok, local_excess, uav_excess, deadline_excess)


def repair_fractions(association: np.ndarray, allocation: np.ndarray, config: ScenarioConfig, m: int) -> np.ndarray:
    """Array form of :func:`repair_allocation`."""
    frac = np.array(allocation, dtype=float)
    frac[frac <= 0] = MIN_FRACTION
    loc = association == 0
    if config.local_mode == "full_capacity":
        frac[loc] = 1.0
    else:
        frac[loc] = np.minimum(frac[loc], 1.0)
    load = uav_load(association, frac, m)
    exact = exact_uav_load(association, frac, m)
    for j in range(m):
        if exact[j] <= 1:
            continue
        members = association == j + 1
        frac[members] = frac[members] / max(load[j], 1.0)
        # rounding can leave the exact sum a few ulp over; step down until it fits
        while sum(map(Fraction, frac[members].tolist())) > 1:
            frac[members] = np.nextafter(frac[members], 0.0)
    return frac


def repair_allocation(scenario: Scenario, schedule: Schedule) -> Schedule:
    """Scale every over-subscribed UAV's allocations proportionally down to
    its capacity and clamp local allocations to the local capacity."""
    frac = repair_fractions(schedule.association, schedule.allocation, scenario.config, scenario.active_uav_count)
    return Schedule(schedule.association, frac)


def min_energy_allocation(scenario: Scenario, association, channels) -> Schedule:
    """Cheapest feasible allocation for a fixed association.

    Local tasks run at full capacity (``full_capacity`` mode) or exactly
    at the deadline. For each UAV the tasks share one makespan ``T``;
    every task gets the smallest resource that meets ``T`` and the convex
    one-dimensional cost ``sum(E^u) + weight * P^h * T`` is minimized over
    the capacity- and deadline-feasible range of ``T``.
    """
    cfg = scenario.config
    c = cfg.constants
    a = np.asarray(association, dtype=np.int64)
    rates = _rates_of(channels)
    frac = np.ones(len(a))
    loc = a == 0
    if cfg.local_mode == "deadline":
        frac[loc] = np.minimum(scenario.cycles[loc] / cfg.deadline_s / c.local_cap, 1.0)
    for j in range(1, scenario.active_uav_count + 1):
        idx = np.flatnonzero(a == j)
        if len(idx) == 0:
            continue
        frac[idx] = _uav_makespan_fractions(
            scenario.data_bits[idx] / rates[idx, j - 1], scenario.cycles[idx], cfg
        )
    return Schedule(a, repair_fractions(a, frac, cfg, scenario.active_uav_count))


def _uav_makespan_fractions(t_tx: np.ndarray, cycles: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    c = cfg.constants
    cap = c.uav_cap
    f_min = MIN_FRACTION * cap

    def alloc(T):
        with np.errstate(divide="ignore"):
            f = cycles / np.maximum(T - t_tx, 0.0)
        return np.clip(f, f_min, cap)

    def cost(T):
        f = alloc(T)
        return float(np.sum(c.nu2 * f ** (c.tau2 - 1) * cycles)) + c.hover_weight * c.hover_power_w * T

    t_first = float(np.max(t_tx + cycles / cap))
    t_last = float(np.max(t_tx + cycles / f_min))
    if np.sum(alloc(t_first)) > cap:
        t_first = brentq(lambda T: np.sum(cycles / (T - t_tx)) - cap, t_first, t_last, xtol=1e-12)
        # brentq's root may sit a hair under the capacity boundary
        bump = np.spacing(t_first)
        while np.sum(alloc(t_first)) > cap:
            t_first += bump
            bump *= 2.0
    if cfg.deadline_s is not None:
        t_last = max(min(t_last, cfg.deadline_s), t_first)
    if t_last - t_first <= 1e-12:
        best = t_first
    else:
        res = minimize_scalar(cost, bounds=(t_first, t_last), method="bounded", options={"xatol": 1e-9})
        best = float(res.x)
        if cost(t_first) <= res.fun:
            best = t_first
    f = alloc(best)
    # guard against a one-ulp overshoot of the shared capacity
    while np.sum(f) > cap:
        f = np.nextafter(f, 0.0)
    return f / cap


# -- scenario generation ----------------------------------------------------


def sample_tasks(rng: np.random.Generator, n: int, config: ScenarioConfig):
    lo, hi = config.data_bits_range
    data = rng.uniform(lo, hi, n)
    lo, hi = config.cycles_range
    cyc = rng.uniform(lo, hi, n)
    return data, cyc


def task_stream_rng(seed: int, slot: int) -> np.random.Generator:
    """Per-slot task generator, independent of any other random draw."""
    return np.random.default_rng([int(seed), 0x7A5C, int(slot)])


def place_uavs(ue_positions, m: int, config: ScenarioConfig, seed: int = 0) -> np.ndarray:
    from .placement import ls_fcm

    centers = ls_fcm(
        np.asarray(ue_positions)[:, :2],
        m,
        fuzzifier=config.fcm_fuzzifier,
        pathloss_exponent=config.fcm_pathloss_exponent,
        max_iter=config.fcm_max_iter,
        tol=config.fcm_tol_m,
        seed=seed,
    )
    return np.column_stack([centers, np.full(m, config.uav_altitude_m)])


def generate_scenario(seed: int, n_ues: int, m_uavs: int, config: Optional[ScenarioConfig] = None) -> Scenario:
    """Draw UE and IRS positions and one task per UE, then place the UAVs.

    Deterministic given ``seed``.
    """
    config = config or ScenarioConfig()
    if n_ues < 1 or m_uavs < 1:
        raise ConfigError("need at least one UE and one UAV")
    if m_uavs > config.max_uavs:
        raise ConfigError(f"{m_uavs} UAVs requested but at most {config.max_uavs} are allowed")
    if m_uavs > n_ues:
        raise ConfigError("cannot place more UAVs than there are UEs")
    rng = np.random.default_rng(seed)
    w, h = config.area_m
    ues = np.column_stack([rng.uniform(0, w, n_ues), rng.uniform(0, h, n_ues), np.zeros(n_ues)])
    n_irs = config.n_irs or n_ues
    irss = np.column_stack([rng.uniform(0, w, n_irs), rng.uniform(0, h, n_irs), np.full(n_irs, config.irs_altitude_m)])
    data, cyc = sample_tasks(rng, n_ues, config)
    uavs = place_uavs(ues, m_uavs, config, seed=seed)
    return Scenario(ues, data, cyc, uavs, irss, config, seed)


# -- JSON -------------------------------------------------------------------


def _xyz(p) -> dict:
    return {"x_m": float(p[0]), "y_m": float(p[1]), "z_m": float(p[2])}


def config_to_dict(config: ScenarioConfig) -> dict:
    d = asdict(config)
    d["area_m"] = list(config.area_m)
    d["data_mb_range"] = list(config.data_mb_range)
    d["cycles_range"] = list(config.cycles_range)
    return d


def config_from_dict(d: dict) -> ScenarioConfig:
    d = dict(d)
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    consts = d.pop("constants", {})
    cknown = {f.name for f in fields(PhysicalConstants)}
    if set(consts) - cknown:
        raise ConfigError(f"unknown constant keys: {sorted(set(consts) - cknown)}")
    for key in ("area_m", "data_mb_range", "cycles_range"):
        if key in d:
            d[key] = tuple(d[key])
    return ScenarioConfig(constants=PhysicalConstants(**consts), **d)


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "schema": SCENARIO_SCHEMA,
        "rng_seed": int(s.rng_seed),
        "active_uav_count": s.active_uav_count,
        "config": config_to_dict(s.config),
        "ues": [
            {**_xyz(p), "data_bits": float(r), "cycles": float(f)}
            for p, r, f in zip(s.ue_positions, s.data_bits, s.cycles)
        ],
        "uavs": [_xyz(p) for p in s.uav_positions],
        "irss": [_xyz(p) for p in s.irs_positions],
    }


def scenario_from_dict(d: dict) -> Scenario:
    if d.get("schema") != SCENARIO_SCHEMA:
        raise ConfigError(f"unsupported scenario schema {d.get('schema')!r}")
    pos = lambda items: np.array([[e["x_m"], e["y_m"], e["z_m"]] for e in items], float).reshape(-1, 3)
    s = Scenario(
        ue_positions=pos(d["ues"]),
        data_bits=[e["data_bits"] for e in d["ues"]],
        cycles=[e["cycles"] for e in d["ues"]],
        uav_positions=pos(d["uavs"]),
        irs_positions=pos(d["irss"]),
        config=config_from_dict(d["config"]),
        rng_seed=d.get("rng_seed", 0),
    )
    if s.active_uav_count != d["active_uav_count"]:
        raise ConfigError("active_uav_count does not match the UAV list")
    return s


def scenario_to_json(s: Scenario, **kw) -> str:
    return json.dumps(scenario_to_dict(s), **kw)


def scenario_from_json(text: str) -> Scenario:
    return scenario_from_dict(json.loads(text))
