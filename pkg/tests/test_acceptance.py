"""Acceptance checks. Each test prints one ``criterion N: PASS|FAIL`` line
with the measured quantities and then asserts the same condition.

The heavy desk-scale runs (10 seeds x 1000 slots) are shared between the
ordering, multi-task and constraint-safety criteria through a
module-scoped fixture.
"""
import time
from fractions import Fraction

import numpy as np
import pytest

from fres import checks, cli
from fres import experiments as X
from fres.agent import make_agent
from fres.config import OUTPUT_ROOT_ENV, SearchBudgets
from fres.runtime import EpisodeConfig, run_baseline, run_episode

SLOTS = 1000
WINDOW = 100
SEEDS = list(range(10))
MT_SEEDS = list(range(5))


def report(n, ok, **info):
    details = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in info.items())
    print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {details}")


class SafetyAudit:
    """Independent check of every executed schedule: integer association
    in ``0..m`` and exact rational per-UAV load at most one."""

    def __init__(self):
        self.schedules = 0
        self.violations = 0

    def __call__(self, t, agent, pool, sc, ch, x):
        m = sc.active_uav_count
        a = x.association
        bad = not (a.dtype.kind == "i" and len(a) == sc.n_ues and np.all((a >= 0) & (a <= m)))
        load = [Fraction(0)] * m
        for j, f in zip(a.tolist(), x.allocation.tolist()):
            bad |= not (0 < f <= 1)
            if j > 0:
                load[j - 1] += Fraction(f)
        bad |= any(v > 1 for v in load)
        self.schedules += 1
        self.violations += int(bad)


@pytest.fixture(scope="module")
def desk():
    """FRES (multi- and single-task) episodes plus matched baselines."""
    audit = SafetyAudit()
    ep = EpisodeConfig(n_ues=10, total_slots=SLOTS, uav_schedule=[(0, 2)])
    slots = range(SLOTS - WINDOW, SLOTS)
    t0 = time.perf_counter()
    fres = {s: run_episode(ep, s, hook=audit).records for s in SEEDS}
    base = {k: {s: run_baseline(k, ep, s, slots, search_iters=90) for s in SEEDS}
            for k in ("random", "local", "remote", "ts")}
    t_order = time.perf_counter() - t0
    t0 = time.perf_counter()
    single_ep = EpisodeConfig(n_ues=10, total_slots=SLOTS, uav_schedule=[(0, 2)], agent="singletask")
    single = {s: run_episode(single_ep, s, hook=audit).records for s in MT_SEEDS}
    t_single = time.perf_counter() - t0
    return {"fres": fres, "base": base, "single": single, "audit": audit,
            "t_order": t_order, "t_single": t_single}


def test_criterion_1_qpb_optimality():
    r = checks.qpb_enumeration_check(geometries=200, seed=0, max_k=3, max_levels=4, tol=1e-9)
    ok = r["passed"] and r["seconds"] < 10
    report(1, ok, max_rel_error=r["max_rel_error"], cases=r["cases"], seconds=r["seconds"])
    assert ok


def test_criterion_2_gradients():
    r = checks.gradient_check_suite(draws=50, seed=0, tol=1e-4)
    ok = r["passed"] and r["seconds"] < 60
    report(2, ok, max_rel_error=r["max_rel_error"], draws=r["cases"], seconds=r["seconds"])
    assert ok


def test_criterion_3_no_forgetting():
    """Train at m=3, grow to m=4 and train, return to m=3 and keep training;
    outputs on 100 stored m=3 states and the energy of an m=3 slot must be
    bit-identical to the snapshot taken before the growth."""
    ep = EpisodeConfig(n_ues=10, total_slots=300, uav_schedule=[(0, 3), (100, 4), (200, 3)])
    snap = {}

    def hook(t, agent, pool, sc, ch, x):
        if t == 0:
            snap["slot"] = (sc, ch)
        if t == 99:
            states = np.array([tr.state for tr in list(pool.buffer(3).items)[:100]])
            snap["states"] = states
            snap["out"] = agent.net.forward(states, keep_cache=False)
            snap["act"] = agent.act(states, 3)
            snap["energy"] = _agent_energy(agent, *snap["slot"])
        if t == 150:
            snap["changed_at_4"] = not np.array_equal(agent.act(snap["states"], 4)[1], snap["act"][1])

    res = run_episode(ep, 3, hook=hook)
    agent = res.agent
    assert agent.m == 3 and res.adjustments == 2
    out = agent.net.forward(snap["states"], keep_cache=False)
    same_out = all(np.array_equal(out[k], snap["out"][k]) for k in out)
    act = agent.act(snap["states"], 3)
    same_act = np.array_equal(act[0], snap["act"][0]) and np.array_equal(act[1], snap["act"][1])
    e_after = _agent_energy(agent, *snap["slot"])
    ulps = abs(e_after - snap["energy"]) / np.spacing(snap["energy"])
    ok = same_out and same_act and e_after == snap["energy"] and len(snap["states"]) == 100
    report(3, ok, states=len(snap["states"]), outputs_identical=same_out, energy_before=snap["energy"],
           energy_after=e_after, ulp_diff=float(ulps), m4_outputs_differ=snap["changed_at_4"])
    assert ok


def _agent_energy(agent, sc, ch):
    from fres.agent import encode_states
    from fres.env import Schedule, repair_allocation, total_energy

    a, f = agent.act(encode_states(sc, ch, agent.m_max), 3)
    return total_energy(sc, repair_allocation(sc, Schedule(a, f)), ch).total_j


def test_criterion_4_lts_vs_oracle():
    r = checks.lts_oracle_check(instances=20, seed=0, max_iter=30, grid=8, n_ues=(2, 3), m_uavs=(1, 2))
    ok = r["passed"] and r["seconds"] < 120
    report(4, ok, exact=r["exact"], within_1pct=r["within_1pct"], max_rel_gap=r["max_rel_gap"], seconds=r["seconds"])
    assert ok


def test_criterion_5_method_ordering(desk):
    fres = np.mean([[r.total_j for r in desk["fres"][s][-WINDOW:]] for s in SEEDS])
    means = {k: np.mean([[r.total_j for r in v[s]] for s in SEEDS]) for k, v in desk["base"].items()}
    gap = (fres - means["ts"]) / means["ts"]
    ok = (fres <= means["random"] and fres <= means["local"] and fres <= means["remote"]
          and gap <= 0.05 and desk["t_order"] < 15 * 60)
    report(5, ok, fres=fres, random=means["random"], local=means["local"], remote=means["remote"],
           ts90=means["ts"], gap_vs_ts=gap, seconds=desk["t_order"])
    assert ok


def test_criterion_6_lts_convergence():
    ep = EpisodeConfig(n_ues=10, total_slots=1, uav_schedule=[(0, 2)])
    budgets = SearchBudgets()
    iters = {k: [] for k in ("lts", "ts")}
    final = {k: [] for k in ("lts", "ts", "sa", "asa")}
    for seed in range(10):
        for k in final:
            trace = X.search_trace(k, ep, seed, budgets)
            final[k].append(trace[-1])
            if k in iters:
                iters[k].append(X.iterations_to_within(trace, 0.01))
    med_it = {k: float(np.median(v)) for k, v in iters.items()}
    med_f = {k: float(np.median(v)) for k, v in final.items()}
    worst_taboo = max(med_f["lts"], med_f["ts"])
    ok = med_it["lts"] < med_it["ts"] and worst_taboo <= min(med_f["sa"], med_f["asa"])
    report(6, ok, lts_iters=med_it["lts"], ts_iters=med_it["ts"], lts_final=med_f["lts"], ts_final=med_f["ts"],
           sa_final=med_f["sa"], asa_final=med_f["asa"], runs=10)
    assert ok


def test_criterion_7_multitask_vs_singletask(desk):
    multi = np.mean([[r.reward for r in desk["fres"][s][-WINDOW:]] for s in MT_SEEDS])
    single = np.mean([[r.reward for r in desk["single"][s][-WINDOW:]] for s in MT_SEEDS])
    a = make_agent("multitask", 5, 2)
    b = make_agent("singletask", 5, 2)
    n_mt = sum(l.weights.shape[0] for _, l in a.net.named_layers())
    n_st = sum(l.weights.shape[0] for _, l in b.net.named_layers())
    ok = multi >= single
    report(7, ok, multitask_reward=multi, singletask_reward=single, seeds=len(MT_SEEDS),
           multitask_neurons=n_mt, singletask_neurons=n_st)
    assert ok


def test_criterion_8_constraint_safety(desk):
    audit = desk["audit"]
    recorded = sum(r.executed_violations for rs in desk["fres"].values() for r in rs)
    recorded += sum(r.executed_violations for rs in desk["single"].values() for r in rs)
    recorded += sum(r.executed_violations for v in desk["base"].values() for rs in v.values() for r in rs)
    ok = audit.violations == 0 and recorded == 0 and audit.schedules == SLOTS * (len(SEEDS) + len(MT_SEEDS))
    report(8, ok, audited_schedules=audit.schedules, audit_violations=audit.violations, recorded_violations=recorded)
    assert ok


def test_criterion_9_determinism(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    runs = [
        ["train", "--ues", "6", "--slots", "40", "--uav-schedule", "0:2,20:3", "--seed", "0,1"],
        ["compare", "--ues", "5", "--slots", "8", "--seed", "0,1", "--methods", "fres,random,local,remote,ts,lts,sa,asa"],
    ]
    same = True
    files = 0
    for k, args in enumerate(runs):
        for tag in ("a", "b"):
            assert cli.main(args + ["--output-dir", f"{k}{tag}"]) == 0
        for fa in sorted((tmp_path / f"{k}a").glob("*")):
            fb = tmp_path / f"{k}b" / fa.name
            if fa.suffix == ".csv":
                files += 1
                same &= fa.read_bytes() == fb.read_bytes()
    ok = same and files >= 3
    report(9, ok, compared_files=files)
    assert ok
