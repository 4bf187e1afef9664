"""Scheduling agents, the replay-buffer pool and the progressive scheduler.

The agent maps one UE's state (its gain to every UAV plus its task size)
to an association class and an allocation fraction. Its network is built
for ``m0`` UAVs; every extra UAV adds one slice of 16 units to each
hidden layer. A slice belongs to a *stage* (the UAV count that created
it). Only parameters owned by the current stage train, and growing past
a stage freezes it for good, so masking back to an older UAV count
restores the older network exactly.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from . import nn
from .errors import CheckpointError, ConfigError, ProgressiveAdjustRequired, ShapeError

GAIN_DB_RANGE = (-140.0, -40.0)
FRACTION_CLIP = (1e-3, 1.0 - 1e-3)
GROWTH_UNITS = 16
FRACTION_SCALES = ("log", "linear")
_LOG_FLOOR = math.log(FRACTION_CLIP[0])


def fraction_to_target(frac, scale: str = "log") -> np.ndarray:
    """Map a fraction to the fitting head's output range ``[0, 1]``.

    On the log scale equal relative errors cost the same, which matters
    because execution time grows like ``1 / fraction``.
    """
    f = np.clip(np.asarray(frac, float), FRACTION_CLIP[0], 1.0)
    if scale == "linear":
        return f
    return 1.0 - np.log(f) / _LOG_FLOOR


def target_to_fraction(y, scale: str = "log") -> np.ndarray:
    y = np.asarray(y, float)
    f = y if scale == "linear" else np.exp(_LOG_FLOOR * (1.0 - y))
    return np.clip(f, *FRACTION_CLIP)


# -- state ------------------------------------------------------------------


def encode_states(scenario, channels, m_max: int, db_range=GAIN_DB_RANGE) -> np.ndarray:
    """``(N, m_max + 2)`` states: scaled gains, then data and cycle sizes."""
    n = scenario.n_ues
    lo, hi = db_range
    out = np.zeros((n, m_max + 2))
    m = channels.gains.shape[1]
    if m > m_max:
        raise ShapeError(f"{m} active UAVs exceed the state width for {m_max}")
    out[:, :m] = np.clip((channels.gain_db() - lo) / (hi - lo), 0.0, 1.0)
    cfg = scenario.config
    out[:, m_max] = _minmax(scenario.data_bits, *cfg.data_bits_range)
    out[:, m_max + 1] = _minmax(scenario.cycles, *cfg.cycles_range)
    return out


def encode_state(scenario, channels, ue_index: int, m_max: int, db_range=GAIN_DB_RANGE) -> np.ndarray:
    return encode_states(scenario, channels, m_max, db_range)[ue_index]


def _minmax(v, lo, hi):
    if hi <= lo:
        return np.full(np.shape(v), 0.5)
    return np.clip((np.asarray(v, float) - lo) / (hi - lo), 0.0, 1.0)


# -- replay -----------------------------------------------------------------


@dataclass
class Transition:
    state: np.ndarray
    association: int
    fraction: float
    priority: float = 1.0


class ReplayBuffer:
    """Bounded FIFO of transitions with proportional prioritized sampling."""

    def __init__(self, capacity: int = 1024):
        if capacity < 1:
            raise ConfigError("buffer capacity must be >= 1")
        self.capacity = capacity
        self.items = deque(maxlen=capacity)

    def __len__(self):
        return len(self.items)

    def max_priority(self) -> float:
        return max((t.priority for t in self.items), default=1.0)

    def append(self, t: Transition) -> None:
        t.priority = self.max_priority()
        self.items.append(t)

    def probabilities(self, a: float = 0.6) -> np.ndarray:
        p = np.array([t.priority for t in self.items]) ** a
        return p / p.sum()

    def sample(self, batch_size: int, rng, a: float = 0.6) -> Optional[List[Transition]]:
        if not self.items:
            return None
        idx = rng.choice(len(self.items), size=batch_size, p=self.probabilities(a))
        return [self.items[k] for k in idx]


class ReplayBufferPool:
    """One replay buffer per UAV count."""

    def __init__(self, capacity: int = 1024):
        self.capacity = capacity
        self.buffers: Dict[int, ReplayBuffer] = {}

    def buffer(self, m: int) -> ReplayBuffer:
        if m not in self.buffers:
            self.buffers[m] = ReplayBuffer(self.capacity)
        return self.buffers[m]

    def sizes(self) -> dict:
        return {m: len(b) for m, b in sorted(self.buffers.items())}


def store_transition(pool: ReplayBufferPool, m: int, transition: Transition) -> None:
    pool.buffer(m).append(transition)


def sample_batch(pool: ReplayBufferPool, m: int, batch_size: int, seed, a: float = 0.6):
    """Prioritized draw with replacement; ``None`` when the buffer is empty."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return pool.buffer(m).sample(batch_size, rng, a)


def update_priorities(batch: List[Transition], losses) -> None:
    for t, loss in zip(batch, np.asarray(losses, float)):
        t.priority = float(loss) + 1e-6


# -- agents -----------------------------------------------------------------


class _ProgressiveAgent:
    """Shared plumbing: stage bookkeeping, freezing, masking, inference."""

    kind = "base"

    def __init__(self, m_max: int, m_init: int, lr: float = 1e-3, seed: int = 0, fraction_scale: str = "log"):
        if fraction_scale not in FRACTION_SCALES:
            raise ConfigError(f"fraction_scale must be one of {FRACTION_SCALES}")
        self.fraction_scale = fraction_scale
        if not 1 <= m_init <= m_max:
            raise ConfigError(f"initial UAV count must lie in [1, {m_max}]")
        self.m_max = m_max
        self.m0 = m_init
        self.m = m_init
        self.built = m_init
        self.frozen: set = set()
        self.rng = np.random.default_rng(seed)
        self.opt = nn.OptimizerState(lr=lr)
        self.net = self._build(self.rng)
        for _, layer in self.net.named_layers():
            layer.biases[:] = 0.0
            if layer.progressive:
                layer.max_slices = m_max - m_init + 1
        self._refresh()

    @property
    def state_dim(self) -> int:
        return self.m_max + 2

    # stage of every output row / input column of a layer
    def _row_stage(self, lname: str, layer: nn.DenseLayer) -> np.ndarray:
        if layer.progressive:
            return np.repeat(self.m0 + np.arange(layer.n_slices), np.diff(layer.slice_bounds))
        return self._output_row_stage(lname, layer)

    def _col_stage(self, layer: nn.DenseLayer) -> np.ndarray:
        return np.repeat(self.m0 + np.arange(len(layer.input_bounds) - 1), np.diff(layer.input_bounds))

    def _refresh(self) -> None:
        """Recompute owners, trainable flags and class masks for ``self.m``."""
        stage = max(self.m, self.m0)
        for lname, layer in self.net.named_layers():
            rs = self._row_stage(lname, layer)
            cs = self._col_stage(layer)
            layer.owner_w = np.maximum(rs[:, None], cs[None, :])
            layer.owner_b = rs.copy()
            live = stage not in self.frozen
            layer.trainable_w = (layer.owner_w == stage) & live
            layer.trainable_b = (layer.owner_b == stage) & live
        self._set_class_mask(self.m)

    def progressive_adjust(self, pool: Optional[ReplayBufferPool], m_new: int):
        """Track a new UAV count; returns ``(self, buffer for m_new)``."""
        if not 1 <= m_new <= self.m_max:
            raise ConfigError(f"UAV count {m_new} outside [1, {self.m_max}]")
        buf = pool.buffer(m_new) if pool is not None else None
        if m_new == self.m:
            return self, buf
        if m_new > self.m:
            self.frozen |= {s for s in range(self.m0, m_new)}
            while self.built < m_new:
                self.built += 1
                self.net.expand(GROWTH_UNITS, rng=self.rng, scale=0.1, owner=self.built)
        for s in range(1, self.built - self.m0 + 1):
            self.net.set_slice_active(s, self.m0 + s <= m_new)
        self.m = m_new
        self._refresh()
        return self, buf

    def act(self, states, m: Optional[int] = None):
        """Association classes and allocation fractions for a batch of states."""
        m = self.m if m is None else m
        if m > self.m:
            raise ProgressiveAdjustRequired(f"agent tracks {self.m} UAVs, asked for {m}")
        states = np.atleast_2d(np.asarray(states, float))
        if states.shape[1] != self.state_dim:
            raise ShapeError(f"state width {states.shape[1]} != {self.state_dim}")
        scores, y = self._scores(states)
        assoc = np.argmax(scores[:, : m + 1], axis=1)
        return assoc, target_to_fraction(y, self.fraction_scale)

    def infer(self, state, m: Optional[int] = None):
        a, f = self.act(state, m)
        return int(a[0]), float(f[0])

    def _batch_arrays(self, batch):
        states = np.array([t.state for t in batch], float)
        labels = np.array([t.association for t in batch], int)
        fracs = fraction_to_target([t.fraction for t in batch], self.fraction_scale)[:, None]
        if states.shape[1] != self.state_dim:
            raise ShapeError("batch states have the wrong width")
        if np.any(labels > self.m) or np.any(labels < 0):
            raise ShapeError("batch labels exceed the active UAV count")
        return states, labels, fracs

    def snapshot(self) -> bytes:
        return save_agent(self)


class MultiTaskAgent(_ProgressiveAgent):
    """Two shared layers (64, 128) feeding an association head (softmax over
    local + UAVs) and an allocation head (sigmoid fraction)."""

    kind = "multitask"

    def __init__(self, m_max: int, m_init: int, lr: float = 1e-3, seed: int = 0,
                 shared=(64, 128), head_hidden: int = 32, fraction_scale: str = "log"):
        self.shared_widths = tuple(shared)
        self.head_hidden = head_hidden
        super().__init__(m_max, m_init, lr, seed, fraction_scale)

    def _build(self, rng):
        dims = [self.m_max + 2, *self.shared_widths]
        shared = [nn.he_layer(dims[q], dims[q + 1], "relu", rng) for q in range(len(dims) - 1)]
        heads = {
            "association": [
                nn.he_layer(dims[-1], self.head_hidden, "relu", rng),
                nn.he_layer(self.head_hidden, self.m_max + 1, "softmax", rng, progressive=False),
            ],
            "allocation": [
                nn.he_layer(dims[-1], self.head_hidden, "relu", rng),
                nn.he_layer(self.head_hidden, 1, "sigmoid", rng, progressive=False),
            ],
        }
        return nn.Network(shared, heads)

    def _output_row_stage(self, lname, layer):
        if lname.startswith("association"):
            return np.maximum(np.arange(layer.out_dim), self.m0)
        return np.full(layer.out_dim, self.m0)

    def _set_class_mask(self, m):
        self.net.heads["association"][-1].unit_mask = np.arange(self.m_max + 1) <= m

    def _scores(self, states):
        out = self.net.forward(states, keep_cache=False)
        return out["association"], out["allocation"][:, 0]

    def train_step(self, batch, xi: float = 1.0):
        """One optimizer step on ``L_ce + xi * L_mse``.

        Returns ``(l_ce, l_mse, l_mt, per_sample_loss)``.
        """
        states, labels, fracs = self._batch_arrays(batch)
        out = self.net.forward(states)
        l_ce = nn.cross_entropy(out["association"], labels)
        l_mse = nn.mse(out["allocation"], fracs)
        grads = self.net.backward(
            {
                "association": nn.cross_entropy_grad(out["association"], labels),
                "allocation": xi * nn.mse_grad(out["allocation"], fracs),
            }
        )
        nn.optimizer_step(self.net, grads, self.opt)
        per = nn.cross_entropy_per_sample(out["association"], labels) + xi * (out["allocation"][:, 0] - fracs[:, 0]) ** 2
        return l_ce, l_mse, nn.multitask_loss(l_ce, l_mse, xi), per


class SingleTaskAgent(_ProgressiveAgent):
    """Same shared trunk and neuron count, one head fitting a vector of
    class indicators plus the fraction with MSE only."""

    kind = "singletask"

    def __init__(self, m_max: int, m_init: int, lr: float = 1e-3, seed: int = 0,
                 shared=(64, 128), head_hidden: int = 64, fraction_scale: str = "log"):
        self.shared_widths = tuple(shared)
        self.head_hidden = head_hidden
        super().__init__(m_max, m_init, lr, seed, fraction_scale)

    def _build(self, rng):
        dims = [self.m_max + 2, *self.shared_widths]
        shared = [nn.he_layer(dims[q], dims[q + 1], "relu", rng) for q in range(len(dims) - 1)]
        heads = {
            "joint": [
                nn.he_layer(dims[-1], self.head_hidden, "relu", rng),
                nn.he_layer(self.head_hidden, self.m_max + 2, "sigmoid", rng, progressive=False),
            ]
        }
        return nn.Network(shared, heads)

    def _output_row_stage(self, lname, layer):
        rows = np.maximum(np.arange(layer.out_dim), self.m0)
        rows[-1] = self.m0
        return rows

    def _set_class_mask(self, m):
        mask = np.arange(self.m_max + 2) <= m
        mask[-1] = True
        self.net.heads["joint"][-1].unit_mask = mask

    def _scores(self, states):
        out = self.net.forward(states, keep_cache=False)["joint"]
        return out[:, :-1], out[:, -1]

    def _targets(self, labels, fracs):
        y = np.zeros((len(labels), self.m_max + 2))
        y[np.arange(len(labels)), labels] = 1.0
        y[:, -1] = fracs[:, 0]
        return y

    def train_step(self, batch, xi: float = 1.0):
        states, labels, fracs = self._batch_arrays(batch)
        out = self.net.forward(states)["joint"]
        y = self._targets(labels, fracs)
        live = self.net.heads["joint"][-1].unit_mask[None, :].astype(float)
        l_mse = nn.mse(out, y, live)
        grads = self.net.backward({"joint": nn.mse_grad(out, y, live)})
        nn.optimizer_step(self.net, grads, self.opt)
        per = np.sum(live * (out - y) ** 2, axis=1)
        return 0.0, l_mse, l_mse, per


AGENT_KINDS = {"multitask": MultiTaskAgent, "singletask": SingleTaskAgent}


def make_agent(kind: str, m_max: int, m_init: int, lr: float = 1e-3, seed: int = 0, fraction_scale: str = "log"):
    if kind not in AGENT_KINDS:
        raise ConfigError(f"unknown agent kind {kind!r}")
    return AGENT_KINDS[kind](m_max, m_init, lr=lr, seed=seed, fraction_scale=fraction_scale)


def progressive_adjust(agent, pool, m_new):
    return agent.progressive_adjust(pool, m_new)


def infer(agent, state, m):
    return agent.infer(state, m)


def train_step(agent, batch, xi: float = 1.0):
    return agent.train_step(batch, xi)


def save_agent(agent, pool: Optional[ReplayBufferPool] = None) -> bytes:
    meta = {
        "agent": agent.kind,
        "m_max": agent.m_max,
        "m0": agent.m0,
        "m": agent.m,
        "built": agent.built,
        "frozen": sorted(agent.frozen),
        "fraction_scale": agent.fraction_scale,
        "pool_sizes": {str(k): v for k, v in (pool.sizes() if pool else {}).items()},
    }
    return nn.save_params(agent.net, agent.opt, meta)


def load_agent(payload: bytes):
    net, opt, meta = nn.load_params(payload)
    kind = meta.get("agent")
    if kind not in AGENT_KINDS:
        raise CheckpointError("payload does not hold an agent")
    agent = AGENT_KINDS[kind].__new__(AGENT_KINDS[kind])
    agent.m_max, agent.m0, agent.m, agent.built = meta["m_max"], meta["m0"], meta["m"], meta["built"]
    agent.frozen = set(meta["frozen"])
    agent.fraction_scale = meta.get("fraction_scale", "log")
    agent.rng = np.random.default_rng(0)
    agent.opt = opt or nn.OptimizerState()
    agent.net = net
    if kind == "multitask":
        agent.shared_widths = tuple(l.slice_bounds[1] for l in net.shared)
        agent.head_hidden = net.heads["association"][0].slice_bounds[1]
    else:
        agent.shared_widths = tuple(l.slice_bounds[1] for l in net.shared)
        agent.head_hidden = net.heads["joint"][0].slice_bounds[1]
    agent._refresh()
    return agent
