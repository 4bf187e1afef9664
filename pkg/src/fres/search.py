"""Action refinement by light taboo search, plus TS/SA/ASA baselines and a
brute-force oracle for tiny instances.

A solution is a :class:`~fres.env.Schedule`. Every search evaluates the
repaired copy of a candidate, so capacity violations are never scored.
Searches either move fractions continuously (perturbation of up to 0.1)
or on a grid ``{1/G, ..., 1}`` (one grid step), and finish with an
allocation polish for the best association found.
"""
from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .env import MIN_FRACTION, Schedule, local_alloc, min_energy_allocation, repair_fractions, total_energy
from .errors import BudgetExceeded, ConfigError, InfeasibleLinkError, InvalidAllocationError

TABOO_LEN = 5
NEIGHBORHOOD = 20
MOVES_PER_TEMPERATURE = 1
ORACLE_BUDGET = 10**7


@dataclass(frozen=True)
class MoveOperator:
    ue_index: int
    old_association: int
    new_association: int

    @property
    def signature(self):
        return (self.ue_index, self.new_association)


@dataclass
class SearchResult:
    schedule: Schedule
    energy: float
    trace: List[dict] = field(default_factory=list)
    evaluations: int = 0
    max_taboo: int = 0


def evaluate(x: Schedule, scenario, channels) -> float:
    """Total energy of the repaired ``x``; ``inf`` for a zero-rate offload."""
    frac = repair_fractions(x.association, x.allocation, scenario.config, scenario.active_uav_count)
    try:
        return total_energy(scenario, Schedule(x.association, frac), channels).total_j
    except (InfeasibleLinkError, InvalidAllocationError):
        return math.inf


class BatchEvaluator:
    """Vectorized :func:`evaluate` over a stack of candidate schedules.

    Agrees with :func:`evaluate` to rounding; the search only needs the
    ranking, and returned solutions are re-scored exactly.
    """

    def __init__(self, scenario, channels):
        cfg = scenario.config
        c = cfg.constants
        self.cfg = cfg
        self.m = scenario.active_uav_count
        self.rates = np.asarray(getattr(channels, "rates", channels), float)
        self.bits = scenario.data_bits
        self.cycles = scenario.cycles
        with np.errstate(divide="ignore"):
            self.t_tx = self.bits[:, None] / self.rates  # (N, m)
        self.e_tx = c.tx_power_w * self.t_tx
        self.count = 0

    def __call__(self, assoc, frac) -> np.ndarray:
        assoc = np.atleast_2d(np.asarray(assoc, np.int64))
        frac = np.atleast_2d(np.asarray(frac, float)).copy()
        c = self.cfg.constants
        k, n = assoc.shape
        self.count += k
        frac[frac <= 0] = MIN_FRACTION
        loc = assoc == 0
        if self.cfg.local_mode == "full_capacity":
            frac[loc] = 1.0
        else:
            frac[loc] = np.minimum(frac[loc], 1.0)
        for j in range(1, self.m + 1):
            on = assoc == j
            load = np.sum(np.where(on, frac, 0.0), axis=1, keepdims=True)
            scale = np.where(load > 1.0, 1.0 / np.maximum(load, 1e-300), 1.0)
            frac = np.where(on, frac * scale, frac)
        f0 = local_alloc(frac, self.cfg)
        energy = np.sum(np.where(loc, c.nu1 * f0 ** (c.tau1 - 1) * self.cycles, 0.0), axis=1)
        col = np.clip(assoc - 1, 0, max(self.m - 1, 0))
        rows = np.arange(n)[None, :]
        t_tx = self.t_tx[rows, col]
        e_tx = self.e_tx[rows, col]
        f = frac * c.uav_cap
        rem = ~loc
        energy = energy + np.sum(np.where(rem, e_tx + c.nu2 * f ** (c.tau2 - 1) * self.cycles, 0.0), axis=1)
        busy = np.where(rem, t_tx + self.cycles / f, 0.0)
        hover = np.zeros(k)
        for j in range(1, self.m + 1):
            hover += np.max(np.where(assoc == j, busy, 0.0), axis=1)
        energy = energy + c.hover_weight * c.hover_power_w * hover
        return np.where(np.isfinite(energy), energy, math.inf)


def _grid_values(grid: int) -> np.ndarray:
    return np.arange(1, grid + 1) / grid


def snap_to_grid(frac, grid: int) -> np.ndarray:
    return np.clip(np.round(np.asarray(frac, float) * grid), 1, grid) / grid


class AllocationSolver:
    """Cheapest allocation for the UEs sharing one UAV.

    The members share a makespan ``T``; each gets the smallest resource
    finishing by ``T`` (clipped to ``[MIN_FRACTION, 1]`` of the server) and
    ``T`` minimizes ``sum(nu2 f^2 C) + weight * P^h * T`` under the server
    capacity. The cost is convex in ``T``, so its minimizer is the sign
    change of the derivative, found by safeguarded Newton steps for many
    member sets at once. With ``grid`` the fractions are instead picked
    from ``{1/G, ..., 1}`` by enumeration (repairing overloads), falling
    back to the rounded continuous optimum when that would exceed
    ``max_enum`` combinations. Results are cached per member set.
    """

    def __init__(self, scenario, channels, grid: Optional[int] = None, max_enum: int = 4096):
        cfg = scenario.config
        self.cfg = cfg
        self.c = cfg.constants
        self.grid = grid
        self.max_enum = max_enum
        rates = np.asarray(getattr(channels, "rates", channels), float)
        with np.errstate(divide="ignore"):
            self.t_tx = scenario.data_bits[:, None] / rates
        self.cycles = scenario.cycles
        self.cache = {}

    def fractions(self, j: int, members: np.ndarray) -> np.ndarray:
        """Fractions (length ``len(members)``) for UAV ``j`` (1-based)."""
        key = (j, members.tobytes())
        hit = self.cache.get(key)
        if hit is None:
            hit = self.solve(j, members[None, :])[0]
            self.cache[key] = hit
        return hit

    def solve(self, j: int, masks: np.ndarray) -> np.ndarray:
        masks = np.asarray(masks, bool)
        out = np.zeros(masks.shape)
        if self.grid:
            for r, mk in enumerate(masks):
                idx = np.flatnonzero(mk)
                if len(idx) and self.grid ** len(idx) <= self.max_enum:
                    out[r, idx] = self._grid_best(j, idx)
                elif len(idx):
                    cont = self._continuous(j, mk[None, :])[0, idx]
                    out[r, idx] = snap_to_grid(cont, self.grid)
            return out
        return self._continuous(j, masks)

    def _grid_best(self, j, idx):
        c = self.c
        vals = _grid_values(self.grid)
        combos = np.array(list(itertools.product(vals, repeat=len(idx))))
        load = combos.sum(axis=1, keepdims=True)
        combos = np.where(load > 1.0, combos / load, combos)
        f = combos * c.uav_cap
        t = self.t_tx[idx, j - 1]
        cyc = self.cycles[idx]
        cost = np.sum(c.nu2 * f ** (c.tau2 - 1) * cyc, axis=1)
        cost = cost + c.hover_weight * c.hover_power_w * np.max(t + cyc / f, axis=1)
        return combos[int(np.argmin(cost))]

    def _continuous(self, j, masks):
        c = self.c
        cap = c.uav_cap
        fmin = MIN_FRACTION * cap
        weight = c.hover_weight * c.hover_power_w
        t = np.where(masks, self.t_tx[:, j - 1][None, :], 0.0)
        cyc = np.where(masks, self.cycles[None, :], 0.0)
        neg = -np.inf
        t_lo = np.max(np.where(masks, t + cyc / cap, neg), axis=1)
        t_hi = np.max(np.where(masks, t + cyc / fmin, neg), axis=1)

        def load(T):
            return np.sum(np.where(masks, cyc / np.maximum(T[:, None] - t, 1e-300), 0.0), axis=1)

        # capacity: Newton from the left on the convex decreasing load - cap
        T = t_lo.copy()
        for _ in range(100):
            h = load(T) - cap
            if not np.any(h > 0):
                break
            d = np.sum(np.where(masks, cyc / np.maximum(T[:, None] - t, 1e-300) ** 2, 0.0), axis=1)
            step = np.where(h > 0, h / d, 0.0)
            T = T + step
            # Newton from the left never crosses the root; stop once steps vanish
            if np.all(step <= 1e-15 * T):
                break
        for _ in range(64):
            over = load(T) > cap
            if not over.any():
                break
            T = np.where(over, np.nextafter(T, np.inf), T)
        left = T
        right = np.maximum(t_hi, left)
        if self.cfg.deadline_s is not None:
            right = np.maximum(np.minimum(right, self.cfg.deadline_s), left)

        def slope(T):
            gap = np.maximum(T[:, None] - t, 1e-300)
            live = masks & (cyc / gap > fmin)
            g = weight - np.sum(np.where(live, 2 * c.nu2 * cyc**3 / gap**3, 0.0), axis=1)
            dg = np.sum(np.where(live, 6 * c.nu2 * cyc**3 / gap**4, 0.0), axis=1)
            return g, dg

        g_left, _ = slope(left)
        lo, hi = left.copy(), right.copy()
        # every member's own stationary point bounds the root from the left
        if weight > 0:
            own = np.max(np.where(masks, t + np.cbrt(2 * c.nu2 * cyc**3 / weight), neg), axis=1)
            T = np.clip(own, left, right)
        else:
            T = left.copy()
        todo = g_left < 0
        for _ in range(200):
            if not todo.any():
                break
            g, dg = slope(T)
            lo = np.where(todo & (g < 0), T, lo)
            hi = np.where(todo & (g >= 0), T, hi)
            with np.errstate(divide="ignore", invalid="ignore"):
                prop = T - g / dg
            settled = np.isfinite(prop) & (np.abs(prop - T) <= 1e-14 * np.abs(T))
            ok = (prop > lo) & (prop < hi) & np.isfinite(prop)
            new = np.where(ok, prop, 0.5 * (lo + hi))
            done = settled | ((hi - lo) <= 1e-12 * np.maximum(hi, 1.0))
            T = np.where(todo & ~settled, new, T)
            todo = todo & ~done
        T = np.where(g_left < 0, T, left)
        f = np.where(masks, np.clip(cyc / np.maximum(T[:, None] - t, 1e-300), fmin, cap), 0.0)
        frac = f / cap
        for _ in range(64):
            over = frac.sum(axis=1) > 1.0
            if not over.any():
                break
            frac = np.where(over[:, None] & masks, np.nextafter(frac, 0.0), frac)
        return frac


class AssociationEvaluator:
    """Scores associations by their cheapest allocation (see
    :class:`AllocationSolver`) and returns the fractions that achieve it."""

    def __init__(self, scenario, channels, grid: Optional[int] = None):
        self.solver = AllocationSolver(scenario, channels, grid)
        self.batch = BatchEvaluator(scenario, channels)
        self.m = scenario.active_uav_count
        cfg = scenario.config
        self.local = np.ones(scenario.n_ues)
        if cfg.local_mode == "deadline":
            self.local = np.minimum(scenario.cycles / cfg.deadline_s / cfg.constants.local_cap, 1.0)

    @property
    def count(self):
        return self.batch.count

    def allocate(self, assoc: np.ndarray) -> np.ndarray:
        assoc = np.atleast_2d(assoc)
        frac = np.repeat(self.local[None, :], len(assoc), axis=0)
        for j in range(1, self.m + 1):
            on = assoc == j
            keys = {}
            for r in range(len(assoc)):
                if on[r].any():
                    keys.setdefault(on[r].tobytes(), []).append(r)
            missing = [k for k in keys if (j, k) not in self.solver.cache]
            if missing:
                masks = np.array([np.frombuffer(k, bool) for k in missing])
                for k, row in zip(missing, self.solver.solve(j, masks)):
                    self.solver.cache[(j, k)] = row
            for k, rows in keys.items():
                frac[rows] = np.where(on[rows], self.solver.cache[(j, k)], frac[rows])
        return frac

    def __call__(self, assoc, frac=None):
        assoc = np.atleast_2d(np.asarray(assoc, np.int64))
        frac = self.allocate(assoc)
        return self.batch(assoc, frac), frac


def _perturb(f, rng, grid, step):
    if grid:
        return float(np.clip(round(f * grid) + rng.integers(-1, 2), 1, grid) / grid)
    return float(np.clip(f + rng.uniform(-step, step), MIN_FRACTION, 1.0))


def generate_neighborhood(x_c: Schedule, size: int, seed, m: int, grid: Optional[int] = None, step: float = 0.1):
    """``size`` neighbors of ``x_c``, each re-associating one random UE.

    Returns a list of ``(Schedule, MoveOperator)``.
    """
    if size < 1:
        raise ConfigError("neighborhood size must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = len(x_c.association)
    out = []
    for _ in range(size):
        i = int(rng.integers(n))
        old = int(x_c.association[i])
        choices = [a for a in range(m + 1) if a != old]
        new = int(choices[rng.integers(len(choices))])
        a = x_c.association.copy()
        f = x_c.allocation.copy()
        a[i] = new
        f[i] = _perturb(f[i], rng, grid, step)
        out.append((Schedule(a, f), MoveOperator(i, old, new)))
    return out


def best_gain_uav(channels, ue_index: int) -> int:
    return int(np.argmax(channels.gains[ue_index])) + 1


def light_move(x: Schedule, ue_index: int, channels) -> Schedule:
    """Send UE ``ue_index`` to its highest-gain UAV (lowest index on ties)."""
    a = x.association.copy()
    a[ue_index] = best_gain_uav(channels, ue_index)
    return Schedule(a, x.allocation)


ALLOC_MODES = ("optimal", "perturb")


def _start(x0: Schedule, scenario, grid):
    f = x0.allocation if not grid else snap_to_grid(x0.allocation, grid)
    f = repair_fractions(x0.association, f, scenario.config, scenario.active_uav_count)
    return Schedule(x0.association, f)


class _Scorer:
    """Candidate scoring for one search run.

    ``optimal`` scores each association at its cheapest allocation (the
    fractions carried by a candidate are replaced); ``perturb`` scores the
    candidate's own repaired fractions.
    """

    def __init__(self, scenario, channels, alloc, grid):
        if alloc not in ALLOC_MODES:
            raise ConfigError(f"alloc must be one of {ALLOC_MODES}")
        self.alloc = alloc
        self.batch = BatchEvaluator(scenario, channels)
        self.assoc = AssociationEvaluator(scenario, channels, grid) if alloc == "optimal" else None

    @property
    def count(self):
        return self.batch.count + (self.assoc.count if self.assoc else 0)

    def __call__(self, assoc, frac):
        if self.assoc is not None:
            return self.assoc(assoc)
        return self.batch(assoc, frac), np.atleast_2d(np.asarray(frac, float))


def _polish(x: Schedule, e: float, scenario, channels, ev: BatchEvaluator, grid):
    """Improve the allocation of a fixed association; never makes it worse."""
    if grid:
        vals = _grid_values(grid)
        f = x.allocation.copy()
        remote = np.flatnonzero(x.association > 0)
        improved = True
        while improved and len(remote):
            improved = False
            for i in remote:
                cand = np.repeat(f[None, :], len(vals), axis=0)
                cand[:, i] = vals
                es = ev(np.repeat(x.association[None, :], len(vals), axis=0), cand)
                b = int(np.argmin(es))
                if es[b] < e * (1 - 1e-12):
                    f, e, improved = cand[b], float(es[b]), True
        best = Schedule(x.association, f)
    else:
        best = min_energy_allocation(scenario, x.association, channels)
    e_best = evaluate(best, scenario, channels)
    return (best, e_best) if e_best < e else (x, e)


def _initial(x0, scenario, channels, sc: _Scorer, grid):
    """Repaired ``x0`` (the elitism reference) and the search's start point."""
    x_ref = _start(x0, scenario, grid)
    f_ref = evaluate(x_ref, scenario, channels)
    if sc.assoc is None:
        return x_ref, f_ref, x_ref, f_ref
    es, fr = sc(x_ref.association, None)
    x_c = _start(Schedule(x_ref.association, fr[0]), scenario, grid)
    return x_ref, f_ref, x_c, float(es[0])


def _finish(x_b, x_ref, f_ref, scenario, channels, sc, grid, polish):
    x_b = _start(x_b, scenario, grid)
    f_b = evaluate(x_b, scenario, channels)
    if polish and sc.assoc is None:
        x_b, f_b = _polish(x_b, f_b, scenario, channels, sc.batch, grid)
    if not f_b <= f_ref:
        # never hand back anything worse than the repaired start
        x_b, f_b = x_ref, f_ref
    return x_b, f_b


def _taboo_search(x0, scenario, channels, max_iter, taboo_len, nbhd_size, seed, grid, step, light, polish, alloc):
    rng = np.random.default_rng(seed)
    m = scenario.active_uav_count
    sc = _Scorer(scenario, channels, alloc, grid)
    x_ref, f_ref, x_c, f_c = _initial(x0, scenario, channels, sc, grid)
    x_b, f_b = (x_c, f_c) if f_c < f_ref else (x_ref, f_ref)
    taboo = deque(maxlen=taboo_len)
    trace = [{"iteration": 0, "current": f_c, "best": f_b}]
    max_taboo = 0
    best_gain = np.argmax(channels.gains, axis=1) + 1 if light else None
    for k in range(max_iter):
        cands = generate_neighborhood(x_c, nbhd_size, rng, m, grid, step)
        if light:
            twins = []
            for x, p in cands:
                new = int(best_gain[p.ue_index])
                if new != p.old_association:
                    a = x.association.copy()
                    a[p.ue_index] = new
                    twins.append((Schedule(a, x.allocation), MoveOperator(p.ue_index, p.old_association, new)))
            cands = cands + twins
        es, fr = sc(np.array([x.association for x, _ in cands]), np.array([x.allocation for x, _ in cands]))
        order = np.argsort(es, kind="stable")
        j1 = order[0]
        # the runner-up must be a different move; duplicates are common
        j2 = next((j for j in order[1:] if cands[j][1].signature != cands[j1][1].signature), j1)
        (x1, p1), e1 = cands[j1], float(es[j1])
        (x2, p2), e2 = cands[j2], float(es[j2])
        if p1.signature in taboo:
            if e1 < f_b:
                x_c, f_c = Schedule(x1.association, fr[j1]), e1
            else:
                x_c, f_c = Schedule(x2.association, fr[j2]), e2
                taboo.append(p2.signature)
        else:
            taboo.append(p1.signature)
            x_c, f_c = Schedule(x1.association, fr[j1]), e1
        max_taboo = max(max_taboo, len(taboo))
        if f_c < f_b:
            x_b, f_b = x_c, f_c
        trace.append({"iteration": k + 1, "current": f_c, "best": f_b})
    x_b, f_b = _finish(x_b, x_ref, f_ref, scenario, channels, sc, grid, polish)
    return SearchResult(x_b, f_b, trace, sc.count, max_taboo)


def lts(x0: Schedule, scenario, channels, max_iter: int = 10, taboo_len: int = TABOO_LEN,
        nbhd_size: int = NEIGHBORHOOD, seed=0, grid: Optional[int] = None, step: float = 0.1,
        polish: bool = True, alloc: str = "optimal") -> SearchResult:
    """Light taboo search from ``x0``.

    Each iteration scores a random neighborhood of the current solution
    together with the light-moved twin of every neighbor (the moved UE
    sent to its highest-gain UAV instead). The best candidate is taken
    unless its move is taboo and it does not beat the global best, in
    which case the second best is taken and its move made taboo.
    """
    return _taboo_search(x0, scenario, channels, max_iter, taboo_len, nbhd_size, seed, grid, step, True, polish, alloc)


def ts(x0: Schedule, scenario, channels, max_iter: int = 90, taboo_len: int = TABOO_LEN,
       nbhd_size: int = NEIGHBORHOOD, seed=0, grid: Optional[int] = None, step: float = 0.1,
       polish: bool = True, alloc: str = "optimal") -> SearchResult:
    """Plain taboo search: as :func:`lts` without the light-move twins."""
    return _taboo_search(x0, scenario, channels, max_iter, taboo_len, nbhd_size, seed, grid, step, False, polish, alloc)


def temperature_steps(t_max: float, t_min: float, cooling: float) -> int:
    if t_max == t_min:
        return 1
    return math.ceil(math.log(t_min / t_max) / math.log(cooling))


def _anneal(x0, scenario, channels, t_max, t_min, cooling, seed, grid, step, adaptive, moves, polish, alloc):
    if not (t_min > 0 and t_max >= t_min):
        raise ConfigError("need t_max >= t_min > 0")
    if not 0 < cooling < 1:
        raise ConfigError("cooling must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    m = scenario.active_uav_count
    sc = _Scorer(scenario, channels, alloc, grid)
    x_ref, f_ref, x_c, f_c = _initial(x0, scenario, channels, sc, grid)
    x_b, f_b = (x_c, f_c) if f_c < f_ref else (x_ref, f_ref)
    trace = [{"iteration": 0, "current": f_c, "best": f_b}]
    recent = deque(maxlen=10)
    boost = 1.0
    t = t_max
    for k in range(temperature_steps(t_max, t_min, cooling)):
        for _ in range(moves):
            (x, _p), = generate_neighborhood(x_c, 1, rng, m, grid, step)
            es, fr = sc(x.association, x.allocation)
            e = float(es[0])
            temp = t * boost
            accept = e <= f_c or (math.isfinite(e) and rng.random() < math.exp(-(e - f_c) / temp))
            recent.append(accept)
            if accept:
                x_c, f_c = Schedule(x.association, fr[0]), e
                if f_c < f_b:
                    x_b, f_b = x_c, f_c
            if adaptive and len(recent) == recent.maxlen and sum(recent) / len(recent) < 0.05:
                boost *= 1.05
                recent.clear()
        trace.append({"iteration": k + 1, "current": f_c, "best": f_b, "temperature": t * boost})
        t *= cooling
    x_b, f_b = _finish(x_b, x_ref, f_ref, scenario, channels, sc, grid, polish)
    return SearchResult(x_b, f_b, trace, sc.count)


def sa(x0: Schedule, scenario, channels, t_max: float = 100.0, t_min: float = 1.0, cooling: float = 0.95,
       seed=0, grid: Optional[int] = None, step: float = 0.1, moves: int = MOVES_PER_TEMPERATURE,
       polish: bool = True, alloc: str = "optimal") -> SearchResult:
    """Simulated annealing with Metropolis acceptance ``exp(-delta / T)``."""
    return _anneal(x0, scenario, channels, t_max, t_min, cooling, seed, grid, step, False, moves, polish, alloc)


def asa(x0: Schedule, scenario, channels, t_max: float = 100.0, t_min: float = 1.0, cooling: float = 0.95,
        seed=0, grid: Optional[int] = None, step: float = 0.1, moves: int = MOVES_PER_TEMPERATURE,
        polish: bool = True, alloc: str = "optimal") -> SearchResult:
    """Adaptive annealing: the acceptance temperature is raised by 5% each
    time fewer than 5% of the last 10 proposals were accepted."""
    return _anneal(x0, scenario, channels, t_max, t_min, cooling, seed, grid, step, True, moves, polish, alloc)


def exhaustive_oracle(scenario, channels, grid: int = 8, budget: int = ORACLE_BUDGET) -> SearchResult:
    """Global optimum over associations x grid fractions, first in
    lexicographic order on ties."""
    n = scenario.n_ues
    m = scenario.active_uav_count
    total = (m + 1) ** n * grid**n
    if total > budget:
        raise BudgetExceeded(f"{total} evaluations exceed the budget of {budget}")
    ev = BatchEvaluator(scenario, channels)
    vals = _grid_values(grid)
    assocs = np.array(list(itertools.product(range(m + 1), repeat=n)), np.int64)
    fracs = np.array(list(itertools.product(vals, repeat=n)))
    best_e, best = math.inf, None
    for a in assocs:
        es = ev(np.repeat(a[None, :], len(fracs), axis=0), fracs)
        j = int(np.argmin(es))
        if es[j] < best_e:
            best_e, best = float(es[j]), Schedule(a, fracs[j])
    x = _start(best, scenario, grid) if best is not None else None
    return SearchResult(x, evaluate(x, scenario, channels), [], ev.count)
