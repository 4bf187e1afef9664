import numpy as np
import pytest
from scipy import stats

from fres import agent as ag
from fres.channel import build_channel_set
from fres.env import generate_scenario
from fres.errors import ConfigError, ProgressiveAdjustRequired


def random_batch(rng, n, m, m_max):
    return [
        ag.Transition(rng.uniform(size=m_max + 2), int(rng.integers(0, m + 1)), float(rng.uniform(0.05, 0.95)))
        for _ in range(n)
    ]


def test_encode_state_ranges():
    sc = generate_scenario(0, 6, 2)
    ch = build_channel_set(sc)
    s = ag.encode_states(sc, ch, 5)
    assert s.shape == (6, 7)
    assert np.all(s[:, 2:5] == 0)
    assert np.all((s >= 0) & (s <= 1))
    ch.gains[0] = [1e-4, 1e-15]
    s0 = ag.encode_state(sc, ch, 0, 5)
    assert s0[0] == pytest.approx(1.0) and s0[1] == 0.0
    mid = sc.with_tasks(np.full(6, 20 * 8e6), sc.cycles)
    assert ag.encode_state(mid, ch, 0, 5)[5] == pytest.approx(0.5)


def test_infer_masks_and_ties():
    a = ag.MultiTaskAgent(5, 2, seed=1)
    out = a.net.heads["association"][-1]
    out.weights[:] = 0.0
    out.biases[:] = 0.0
    assert a.infer(np.full(7, 0.3))[0] == 0
    out.biases[3:] = 100.0
    assoc, frac = a.act(np.random.default_rng(0).uniform(size=(50, 7)))
    assert assoc.max() <= 2
    assert np.all((frac >= 1e-3) & (frac <= 1 - 1e-3))
    st = np.random.default_rng(3).uniform(size=7)
    assert a.infer(st) == a.infer(st)
    with pytest.raises(ProgressiveAdjustRequired):
        a.infer(st, 3)


def test_replay_fifo_priority_isolation():
    pool = ag.ReplayBufferPool(capacity=2)
    ts = [ag.Transition(np.zeros(3), 0, 0.5) for _ in range(3)]
    for t in ts:
        ag.store_transition(pool, 2, t)
    assert list(pool.buffer(2).items) == ts[1:]
    ts[1].priority = 7.0
    t4 = ag.Transition(np.zeros(3), 1, 0.5)
    ag.store_transition(pool, 2, t4)
    assert t4.priority == 7.0
    ag.store_transition(pool, 3, ag.Transition(np.zeros(3), 0, 0.5))
    assert len(pool.buffer(2)) == 2 and len(pool.buffer(3)) == 1
    assert ag.sample_batch(pool, 4, 8, 0) is None


def test_sampling_distribution():
    buf = ag.ReplayBuffer(10)
    for k in range(10):
        buf.append(ag.Transition(np.array([k]), 0, 0.5))
    draws = [int(t.state[0]) for t in buf.sample(10_000, np.random.default_rng(0))]
    counts = np.bincount(draws, minlength=10)
    assert stats.chisquare(counts).pvalue > 0.01
    for k, t in enumerate(buf.items):
        t.priority = 1000.0 if k == 4 else 1.0
    assert np.allclose(buf.probabilities(a=0.0), 0.1)
    draws = [int(t.state[0]) for t in buf.sample(2000, np.random.default_rng(1))]
    assert np.bincount(draws, minlength=10)[4] > 1000
    ag.update_priorities(buf.items, np.zeros(10))
    assert all(t.priority == 1e-6 for t in buf.items)


def test_overfit_small_batch():
    rng = np.random.default_rng(0)
    a = ag.MultiTaskAgent(3, 2, seed=0, lr=3e-3)
    batch = random_batch(rng, 8, 2, 3)
    losses = [a.train_step(batch)[2] for _ in range(200)]
    assert losses[-1] < 0.01
    med = [np.median(losses[k:k + 50]) for k in range(0, 151, 50)]
    assert all(b <= a_ for a_, b in zip(med, med[1:]))


def test_xi_zero_leaves_allocation_head():
    a = ag.MultiTaskAgent(3, 2, seed=0)
    before = [l.weights.copy() for l in a.net.heads["allocation"]]
    a.train_step(random_batch(np.random.default_rng(1), 4, 2, 3), xi=0.0)
    for l, w in zip(a.net.heads["allocation"], before):
        assert np.array_equal(l.weights, w)


@pytest.mark.parametrize("cls", [ag.MultiTaskAgent, ag.SingleTaskAgent])
def test_no_forgetting(cls):
    rng = np.random.default_rng(5)
    a = cls(5, 3, seed=2)
    for _ in range(20):
        a.train_step(random_batch(rng, 16, 3, 5))
    states = rng.uniform(size=(100, 7))
    states[:, 3:5] = 0.0
    ref = a.net.forward(states, keep_cache=False)
    ref_act = a.act(states)
    same, _ = a.progressive_adjust(None, 3)
    assert same is a
    a.progressive_adjust(None, 4)
    for _ in range(20):
        a.train_step(random_batch(rng, 16, 4, 5))
    a.progressive_adjust(None, 3)
    for _ in range(5):
        a.train_step(random_batch(rng, 16, 3, 5))
    out = a.net.forward(states, keep_cache=False)
    for k in ref:
        assert np.array_equal(ref[k], out[k])
    assert all(np.array_equal(x, y) for x, y in zip(ref_act, a.act(states)))


def test_expand_reaches_new_inputs_and_keeps_base():
    a = ag.MultiTaskAgent(3, 1, seed=4)
    states = np.random.default_rng(0).uniform(size=(10, 5))
    base = a.net.forward(states, keep_cache=False)["allocation"]
    a.progressive_adjust(None, 2)
    a.net.set_slice_active(1, False)
    assert np.array_equal(a.net.forward(states, keep_cache=False)["allocation"], base)
    a.net.set_slice_active(1, True)
    s2 = states.copy()
    s2[:, 1] += 0.5
    assert not np.array_equal(a.net.forward(states, keep_cache=False)["allocation"], a.net.forward(s2, keep_cache=False)["allocation"])
    with pytest.raises(ConfigError):
        a.progressive_adjust(None, 4)


def test_checkpoint_roundtrip_agent():
    a = ag.MultiTaskAgent(4, 2, seed=0)
    a.progressive_adjust(None, 3)
    a.train_step(random_batch(np.random.default_rng(0), 8, 3, 4))
    a.progressive_adjust(None, 2)
    b = ag.load_agent(ag.save_agent(a))
    s = np.random.default_rng(1).uniform(size=(20, 6))
    assert all(np.array_equal(x, y) for x, y in zip(a.act(s), b.act(s)))
    assert b.frozen == a.frozen and b.m == 2 and b.built == 3
