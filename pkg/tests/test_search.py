import itertools
import math

import numpy as np
import pytest

from fres import search as S
from fres.channel import build_channel_set
from fres.env import (
    PhysicalConstants,
    Scenario,
    ScenarioConfig,
    Schedule,
    generate_scenario,
    local_energy,
    min_energy_allocation,
    Task,
)
from fres.errors import BudgetExceeded, ConfigError


def inst(seed, n=3, m=2, hover_weight=0.1):
    cfg = ScenarioConfig(constants=PhysicalConstants(hover_weight=hover_weight))
    sc = generate_scenario(seed, n, m, cfg)
    return sc, build_channel_set(sc)


def test_evaluate_local_matches_hand_sum():
    sc, ch = inst(0, 4, 2)
    x = Schedule(np.zeros(4, int), np.full(4, 0.4))
    hand = sum(local_energy(sc.constants.local_cap, Task(b, c), sc.constants) for b, c in zip(sc.data_bits, sc.cycles))
    assert S.evaluate(x, sc, ch) == pytest.approx(hand, rel=1e-12)


def test_evaluate_repairs_and_flags_dead_links():
    sc, ch = inst(1, 3, 1)
    over = Schedule([1, 1, 1], [0.9, 0.9, 0.9])
    fixed = Schedule([1, 1, 1], [1 / 3, 1 / 3, 1 / 3])
    assert S.evaluate(over, sc, ch) == pytest.approx(S.evaluate(fixed, sc, ch), rel=1e-12)
    rates = ch.rates.copy()
    rates[0, 0] = 0.0
    assert S.evaluate(Schedule([1, 0, 0], [0.5, 1, 1]), sc, rates) == math.inf


def test_batch_evaluator_agrees_with_evaluate():
    rng = np.random.default_rng(0)
    sc, ch = inst(2, 6, 2)
    ev = S.BatchEvaluator(sc, ch)
    a = rng.integers(0, 3, (50, 6))
    f = rng.uniform(0.01, 1.0, (50, 6))
    got = ev(a, f)
    want = [S.evaluate(Schedule(x, y), sc, ch) for x, y in zip(a, f)]
    assert np.allclose(got, want, rtol=1e-12, atol=0)


def test_allocation_solver_matches_reference():
    rng = np.random.default_rng(3)
    for seed in range(12):
        cfg = ScenarioConfig(constants=PhysicalConstants(hover_weight=[1.0, 0.1, 0.0][seed % 3], uav_cap=[3e10, 2e9][seed % 2]))
        sc = generate_scenario(seed, 8, 2, cfg)
        ch = build_channel_set(sc)
        a = rng.integers(0, 3, 8)
        ref = S.evaluate(min_energy_allocation(sc, a, ch), sc, ch)
        e, f = S.AssociationEvaluator(sc, ch)(a)
        got = S.evaluate(Schedule(a, f[0]), sc, ch)
        assert got <= ref * (1 + 1e-9)
        assert e[0] == pytest.approx(got, rel=1e-12)


def test_neighborhood_contract():
    x = Schedule([0, 1, 2, 0], [1.0, 0.3, 0.5, 1.0])
    (y, p), = S.generate_neighborhood(x, 1, 0, 2)
    assert np.sum(y.association != x.association) == 1
    assert p.old_association != p.new_association
    assert abs(y.allocation[p.ue_index] - x.allocation[p.ue_index]) <= 0.1 + 1e-12
    for y, p in S.generate_neighborhood(x, 30, 1, 1):
        assert set(y.association) <= {0, 1, 2} and y.association[p.ue_index] in (0, 1)
    a = S.generate_neighborhood(x, 20, 5, 2)
    b = S.generate_neighborhood(x, 20, 5, 2)
    assert all(u == v and p == q for (u, p), (v, q) in zip(a, b))
    with pytest.raises(ConfigError):
        S.generate_neighborhood(x, 0, 0, 2)


def test_light_move():
    sc, ch = inst(4, 2, 2)
    ch.gains[0] = [1e-10, 2e-10]
    x = Schedule([0, 0], [1.0, 1.0])
    assert S.light_move(x, 0, ch).association[0] == 2
    assert S.light_move(S.light_move(x, 0, ch), 0, ch) == S.light_move(x, 0, ch)
    ch.gains[1] = [3e-10, 3e-10]
    assert S.light_move(x, 1, ch).association[1] == 1


def test_lts_edge_cases_and_bounds():
    sc, ch = inst(5, 3, 2)
    x0 = Schedule([1, 2, 1], [0.9, 0.9, 0.9])
    r = S.lts(x0, sc, ch, max_iter=0)
    assert S.evaluate(r.schedule, sc, ch) <= S.evaluate(x0, sc, ch)
    r = S.lts(x0, sc, ch, max_iter=0, alloc="perturb")
    assert r.schedule.association.tolist() == [1, 2, 1] and r.schedule.allocation.sum() <= 2
    r = S.lts(x0, sc, ch, max_iter=40, taboo_len=3)
    assert r.max_taboo <= 3
    with pytest.raises(ConfigError):
        S.lts(x0, sc, ch, alloc="nope")


@pytest.mark.parametrize("fn", [S.lts, S.ts, S.sa, S.asa])
@pytest.mark.parametrize("alloc", ["optimal", "perturb"])
def test_elitism_and_determinism(fn, alloc):
    sc, ch = inst(6, 4, 2, hover_weight=1.0)
    x0 = Schedule([1, 2, 0, 1], [0.6, 0.2, 1.0, 0.7])
    kw = {"max_iter": 15} if fn in (S.lts, S.ts) else {"t_max": 10.0, "moves": 5}
    r1 = fn(x0, sc, ch, seed=3, alloc=alloc, **kw)
    r2 = fn(x0, sc, ch, seed=3, alloc=alloc, **kw)
    assert r1.schedule == r2.schedule and r1.energy == r2.energy
    assert r1.energy <= S.evaluate(x0, sc, ch)
    assert r1.energy == S.evaluate(r1.schedule, sc, ch)


@pytest.mark.parametrize("seed", range(6))
def test_lts_and_ts_reach_small_oracle(seed):
    sc, ch = inst(seed, 2, 1)
    orc = S.exhaustive_oracle(sc, ch, grid=4)
    x0 = Schedule([1, 0], [0.5, 0.5])
    assert S.lts(x0, sc, ch, max_iter=30, grid=4, seed=seed).energy <= orc.energy * (1 + 1e-9)
    assert S.ts(x0, sc, ch, max_iter=90, grid=4, seed=seed).energy <= orc.energy * (1 + 1e-9)


def test_ts_and_lts_share_random_neighborhood():
    sc, ch = inst(7, 3, 2)
    x0 = Schedule([0, 0, 0], [1.0, 1.0, 1.0])
    a = S.ts(x0, sc, ch, max_iter=1, seed=9, polish=False)
    b = S.lts(x0, sc, ch, max_iter=1, seed=9, polish=False)
    assert b.trace[1]["current"] <= a.trace[1]["current"]


def test_annealing_schedule():
    assert S.temperature_steps(100, 1, 0.95) == 90
    sc, ch = inst(8, 3, 2)
    x0 = Schedule([0, 0, 0], [1.0, 1.0, 1.0])
    r = S.sa(x0, sc, ch, seed=0)
    assert len(r.trace) == 91
    g = S.sa(x0, sc, ch, t_max=1e-9, t_min=1e-9, seed=0)
    best = [t["best"] for t in g.trace]
    assert all(b <= a for a, b in zip(best, best[1:]))
    cur = [t["current"] for t in g.trace]
    assert all(b <= a for a, b in zip(cur, cur[1:]))
    with pytest.raises(ConfigError):
        S.sa(x0, sc, ch, t_max=1.0, t_min=2.0)


def test_oracle_enumeration_and_budget():
    sc, ch = inst(9, 1, 1)
    r = S.exhaustive_oracle(sc, ch, grid=4)
    assert r.evaluations == 8
    sc4, ch4 = inst(9, 4, 2)
    with pytest.raises(BudgetExceeded):
        S.exhaustive_oracle(sc4, ch4, grid=8, budget=1000)


def test_oracle_symmetric_instance():
    cfg = ScenarioConfig(constants=PhysicalConstants(hover_weight=0.1))
    ues = np.array([[30.0, 50.0, 0.0], [70.0, 50.0, 0.0]])
    irs = np.array([[30.0, 60.0, 15.0], [70.0, 60.0, 15.0]])
    uav = np.array([[50.0, 50.0, 30.0]])
    sc = Scenario(ues, np.full(2, 1.6e8), np.full(2, 1e9), uav, irs, cfg)
    ch = build_channel_set(sc)
    r = S.exhaustive_oracle(sc, ch, grid=8)
    swapped = Schedule(r.schedule.association[::-1], r.schedule.allocation[::-1])
    assert S.evaluate(swapped, sc, ch) == pytest.approx(r.energy, rel=1e-12)


def test_oracle_is_brute_force_minimum():
    sc, ch = inst(10, 2, 1)
    r = S.exhaustive_oracle(sc, ch, grid=3)
    vals = [1 / 3, 2 / 3, 1.0]
    brute = min(
        S.evaluate(Schedule(a, f), sc, ch)
        for a in itertools.product(range(2), repeat=2)
        for f in itertools.product(vals, repeat=2)
    )
    assert r.energy == pytest.approx(brute, rel=1e-12)
