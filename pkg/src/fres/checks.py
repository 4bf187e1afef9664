"""Oracle checks: QPB against enumeration, gradients against finite
differences, and LTS against the exhaustive optimum.

Each check returns a plain dict with a ``passed`` flag so the command line
can print it as JSON.
"""
from __future__ import annotations

import itertools
import time

import numpy as np

from . import nn, search
from .channel import PhaseMatrix, cascaded_gain, irs_uav_channel, qpb_phase, ue_irs_channel
from .channel import build_channel_set
from .env import PhysicalConstants, Schedule, ScenarioConfig, generate_scenario
from .errors import BudgetExceeded


def _random_links(rng, k):
    c = PhysicalConstants(elements_per_irs=k)
    ue = np.r_[rng.uniform(0, 100, 2), 0.0]
    irs = np.r_[rng.uniform(0, 100, 2), 15.0]
    uav = np.r_[rng.uniform(0, 100, 2), 30.0]
    return ue_irs_channel(ue, irs, c), irs_uav_channel(irs, uav, c)


def enumerate_best_gain(h_ur, h_rv, n_p: int) -> float:
    """Best cascaded gain over every phase pattern in ``Psi^K``."""
    levels = 2 * np.pi * np.arange(n_p) / n_p
    k = len(h_ur.phases)
    return max(cascaded_gain(h_ur, PhaseMatrix(np.array(t)), h_rv) for t in itertools.product(levels, repeat=k))


def qpb_enumeration_check(geometries: int = 200, seed: int = 0, max_k: int = 3, max_levels: int = 4,
                          tol: float = 1e-9) -> dict:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(geometries):
        k = int(rng.integers(1, max_k + 1))
        n_p = int(rng.integers(1, max_levels + 1))
        h_ur, h_rv = _random_links(rng, k)
        g = cascaded_gain(h_ur, qpb_phase(h_ur, h_rv, n_p), h_rv)
        best = enumerate_best_gain(h_ur, h_rv, n_p)
        worst = max(worst, abs(g - best) / best)
    return {"check": "qpb", "passed": worst <= tol, "max_rel_error": worst, "cases": geometries,
            "seconds": time.perf_counter() - t0}


def _draw_network(rng):
    """Random two-head network, optionally grown and partly masked."""
    d_in = int(rng.integers(2, 7))
    h1, h2 = (int(v) for v in rng.integers(2, 8, 2))
    classes = int(rng.integers(2, 5))
    shared = [nn.he_layer(d_in, h1, "relu", rng), nn.he_layer(h1, h2, "relu", rng)]
    heads = {
        "assoc": [nn.he_layer(h2, 4, "relu", rng), nn.he_layer(4, classes, "softmax", rng, progressive=False)],
        "alloc": [nn.he_layer(h2, 3, "relu", rng), nn.he_layer(3, 1, "sigmoid", rng, progressive=False)],
    }
    net = nn.Network(shared, heads)
    if rng.random() < 0.5:
        net.expand(int(rng.integers(1, 3)), rng=rng, scale=1.0, owner=1)
        if rng.random() < 0.3:
            net.set_slice_active(1, False)
    # random biases keep relu units off the kink at exactly zero
    for _, layer in net.named_layers():
        layer.biases = rng.normal(0.0, 0.1, layer.biases.shape)
    return net, d_in, classes


def gradient_check_suite(draws: int = 50, seed: int = 0, tol: float = 1e-4, corrupt: bool = False) -> dict:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(draws):
        net, d_in, classes = _draw_network(rng)
        b = int(rng.integers(1, 6))
        x = rng.normal(size=(b, d_in))
        labels = rng.integers(0, classes, b)
        targets = rng.uniform(size=(b, 1))
        xi = float(rng.uniform(0.1, 2.0))

        def loss(outs):
            lce = nn.cross_entropy(outs["assoc"], labels)
            lm = nn.mse(outs["alloc"], targets)
            return nn.multitask_loss(lce, lm, xi), {
                "assoc": nn.cross_entropy_grad(outs["assoc"], labels),
                "alloc": xi * nn.mse_grad(outs["alloc"], targets),
            }

        worst = max(worst, nn.gradient_check(net, x, loss, corrupt=corrupt))
    return {"check": "gradient", "passed": worst < tol, "max_rel_error": worst, "cases": draws,
            "corrupted": corrupt, "seconds": time.perf_counter() - t0}


def lts_oracle_check(instances: int = 20, seed: int = 0, max_iter: int = 30, grid: int = 8,
                     n_ues=(2, 3), m_uavs=(1, 2), budget: int = search.ORACLE_BUDGET,
                     config: ScenarioConfig = None) -> dict:
    """LTS from a random start against the exhaustive optimum.

    ``n_ues`` and ``m_uavs`` are inclusive ranges. Raises
    :class:`BudgetExceeded` when an instance is too large to enumerate.
    """
    t0 = time.perf_counter()
    rows = []
    for s in range(seed, seed + instances):
        rng = np.random.default_rng(s)
        n = int(rng.integers(n_ues[0], n_ues[1] + 1))
        m = int(rng.integers(m_uavs[0], min(m_uavs[1], n) + 1))
        sc = generate_scenario(s, n, m, config)
        ch = build_channel_set(sc)
        best = search.exhaustive_oracle(sc, ch, grid, budget)
        x0 = Schedule(rng.integers(0, m + 1, n), rng.uniform(0.05, 1.0, n))
        got = search.lts(x0, sc, ch, max_iter=max_iter, seed=s, grid=grid)
        rows.append({"seed": s, "n": n, "m": m, "oracle_j": best.energy, "lts_j": got.energy,
                     "rel_gap": (got.energy - best.energy) / best.energy})
    gaps = np.array([r["rel_gap"] for r in rows])
    exact = int(np.sum(gaps <= 1e-9))
    within = bool(np.all(gaps <= 0.01))
    return {"check": "lts_oracle", "passed": within and exact >= int(np.ceil(0.9 * instances)),
            "exact": exact, "within_1pct": within, "max_rel_gap": float(gaps.max(initial=0.0)),
            "cases": instances, "instances": rows, "seconds": time.perf_counter() - t0}


def oracle_budget(n: int, m: int, grid: int) -> int:
    """Number of schedules the exhaustive oracle would enumerate."""
    return (m + 1) ** n * grid**n


def run_all(qpb: int = 200, gradient: int = 50, lts_instances: int = 20, lts_iters: int = 30, grid: int = 8,
            n_ues=(2, 3), m_uavs=(1, 2), seed: int = 0, corrupt_gradient: bool = False,
            budget: int = search.ORACLE_BUDGET, config: ScenarioConfig = None) -> dict:
    for n in range(n_ues[0], n_ues[1] + 1):
        need = oracle_budget(n, m_uavs[1], grid)
        if need > budget:
            raise BudgetExceeded(f"oracle for {n} UEs and {m_uavs[1]} UAVs needs {need} evaluations, budget {budget}")
    checks = [
        qpb_enumeration_check(qpb, seed),
        gradient_check_suite(gradient, seed, corrupt=corrupt_gradient),
        lts_oracle_check(lts_instances, seed, lts_iters, grid, n_ues, m_uavs, budget, config),
    ]
    return {"passed": all(c["passed"] for c in checks), "checks": checks}
