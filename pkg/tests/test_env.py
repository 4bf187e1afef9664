import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fres.channel import build_channel_set
from fres.env import (
    PhysicalConstants,
    Schedule,
    ScenarioConfig,
    Task,
    check_constraints,
    distance,
    generate_scenario,
    hover_energy,
    local_energy,
    remote_energy,
    repair_allocation,
    scenario_from_json,
    scenario_to_json,
    total_energy,
    transmit_energy,
)
from fres.errors import ConfigError, InfeasibleLinkError, InvalidAllocationError

C27 = PhysicalConstants(nu1=1e-27, nu2=1e-27)


def small(seed=0, n=4, m=2, **kw):
    cfg = ScenarioConfig(**kw)
    sc = generate_scenario(seed, n, m, cfg)
    return sc, build_channel_set(sc)


@pytest.mark.parametrize("p,q,d", [((0, 0, 0), (0, 0, 0), 0.0), ((0, 0, 0), (3, 4, 0), 5.0), ((1, 2, 3), (4, 6, 3), 5.0)])
def test_distance(p, q, d):
    assert distance(p, q) == d
    assert distance(q, p) == d


def test_local_energy():
    assert local_energy(0.0, Task(1, 1e9), C27) == 0.0
    assert local_energy(1e9, Task(1, 1e9), C27) == pytest.approx(1.0, rel=1e-12)
    assert local_energy(1e9, Task(1, 2e9), C27) == pytest.approx(2.0, rel=1e-12)


def test_transmit_energy():
    assert transmit_energy(1.0, 0.0, 0.0) == 0.0
    assert transmit_energy(1.0, 8e6, 1e6) == 8.0
    with pytest.raises(InfeasibleLinkError):
        transmit_energy(1.0, 8e6, 0.0)


def test_remote_energy():
    assert remote_energy(1e9, Task(1, 1e9), C27) == pytest.approx(1.0, rel=1e-12)
    c = PhysicalConstants(nu2=1e-27, tau2=1.0)
    assert remote_energy(1e9, Task(1, 1e9), c) == remote_energy(5e9, Task(1, 1e9), c) == pytest.approx(1e-18)
    with pytest.raises(InvalidAllocationError):
        remote_energy(0.0, Task(1, 1e9), C27)


def test_hover_energy():
    c = PhysicalConstants(hover_power_w=1.0)
    s = Schedule([0, 1], [1.0, 0.5])
    assert hover_energy(2, s, ([0, 0], [1, 1]), c) == 0.0
    assert hover_energy(1, Schedule([1], [0.5]), ([2.0], [3.0]), c) == 5.0
    assert hover_energy(1, Schedule([1, 1], [0.5, 0.5]), ([1.0, 2.0], [3.0, 3.0]), c) == 5.0


def test_total_energy_all_local():
    sc, ch = small()
    e = total_energy(sc, Schedule(np.zeros(4, int), np.ones(4)), ch)
    assert not e.transmit_j.any() and not e.remote_j.any() and not e.hover_j.any()
    assert e.total_j == pytest.approx(e.local_j.sum())


def test_total_energy_single_offload_hand_sum():
    sc, ch = small()
    c = sc.constants
    s = Schedule([1, 0, 0, 0], [0.25, 1, 1, 1])
    e = total_energy(sc, s, ch)
    r = ch.rates[0, 0]
    f = 0.25 * c.uav_cap
    et = c.tx_power_w * sc.data_bits[0] / r
    eu = c.nu2 * f ** (c.tau2 - 1) * sc.cycles[0]
    eh = c.hover_power_w * (sc.data_bits[0] / r + sc.cycles[0] / f)
    el = sum(c.nu1 * c.local_cap ** (c.tau1 - 1) * sc.cycles[i] for i in range(1, 4))
    assert e.total_j == pytest.approx(et + eu + eh + el, rel=1e-12)


def test_hover_weight_zero_excludes_hover():
    sc, ch = small(constants=PhysicalConstants(hover_weight=0.0))
    s = Schedule([1, 2, 0, 1], [0.3, 0.3, 1, 0.3])
    e = total_energy(sc, s, ch)
    assert e.hover_j.sum() > 0
    assert e.total_j == pytest.approx(e.local_j.sum() + e.transmit_j.sum() + e.remote_j.sum(), rel=1e-12)


def test_check_constraints_examples():
    sc, ch = small(n=3, m=1)
    assert check_constraints(sc, Schedule([1, 1, 0], [0.5, 0.5, 1])).capacity_ok
    rep = check_constraints(sc, Schedule([1, 1, 0], [2 / 3, 2 / 3, 1]))
    assert not rep.capacity_ok
    assert rep.uav_excess[0] == pytest.approx(1e10, rel=1e-9)
    sc2, _ = small(n=3, m=1, local_mode="deadline", deadline_s=2.0)
    rep = check_constraints(sc2, Schedule([0, 0, 0], [1.2, 1, 1]))
    assert rep.local_excess[0] == pytest.approx(0.2 * sc2.constants.local_cap)
    assert rep.violations()


def test_repair_examples():
    sc, _ = small(n=3, m=1)
    s = repair_allocation(sc, Schedule([1, 1, 0], [2 / 3, 2 / 3, 1]))
    assert s.allocation[:2] * sc.constants.uav_cap == pytest.approx([1.5e10, 1.5e10])
    ok = Schedule([1, 0, 0], [0.4, 1, 1])
    assert repair_allocation(sc, ok) == ok
    one = repair_allocation(sc, Schedule([1, 0, 0], [4 / 3, 1, 1]))
    assert one.allocation[0] * sc.constants.uav_cap == pytest.approx(3e10)


def test_generate_scenario():
    a = generate_scenario(3, 50, 2)
    b = generate_scenario(3, 50, 2)
    assert scenario_to_json(a) == scenario_to_json(b)
    assert len(a.ue_positions) == 50 and len(a.irs_positions) == 50
    lo, hi = a.config.data_bits_range
    assert lo == 19 * 8e6 and hi == 21 * 8e6
    assert np.all((a.data_bits >= lo) & (a.data_bits <= hi))
    assert np.all((a.cycles >= 0.95e9) & (a.cycles <= 1.05e9))
    assert np.all(a.uav_positions[:, 2] == 30.0) and np.all(a.irs_positions[:, 2] == 15.0)
    with pytest.raises(ConfigError):
        generate_scenario(0, 50, 6)


def test_scenario_json_round_trip():
    a = generate_scenario(1, 5, 2)
    b = scenario_from_json(scenario_to_json(a))
    assert scenario_to_json(b) == scenario_to_json(a)
    d = json.loads(scenario_to_json(a))
    d["config"]["bogus"] = 1
    with pytest.raises(ConfigError):
        scenario_from_json(json.dumps(d))


schedules = st.integers(0, 10_000).flatmap(
    lambda seed: st.tuples(
        st.just(seed),
        st.lists(st.integers(0, 2), min_size=5, max_size=5),
        st.lists(st.floats(0.0, 2.0, allow_subnormal=False), min_size=5, max_size=5),
    )
)


@settings(max_examples=60, deadline=None)
@given(schedules)
def test_additivity_and_repair_properties(args):
    seed, assoc, frac = args
    sc, ch = small(seed % 7, n=5, m=2)
    s = Schedule(assoc, frac)
    r = repair_allocation(sc, s)
    assert repair_allocation(sc, r) == r
    rep = check_constraints(sc, r)
    assert rep.capacity_ok
    for j in (1, 2):
        assert r.allocation[r.association == j].sum() <= 1.0
    e = total_energy(sc, r, ch)
    parts = e.local_j.sum() + e.transmit_j.sum() + e.remote_j.sum() + sc.constants.hover_weight * e.hover_j.sum()
    assert e.total_j == pytest.approx(parts, rel=1e-9)
    assert min(e.local_j.min(), e.transmit_j.min(), e.remote_j.min(), e.hover_j.min()) >= 0


@given(st.floats(1e6, 1e10), st.floats(1.01, 2.0))
def test_monotonicity(f, k):
    t = Task(1e6, 1e9)
    assert local_energy(f, t, C27) <= local_energy(f * k, t, C27)
    assert remote_energy(f, t, C27) <= remote_energy(f * k, t, C27)
    assert transmit_energy(1.0, 1e6, f) > transmit_energy(1.0, 1e6, f * k)
