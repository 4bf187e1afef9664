"""A small dense-network engine with slice growth and masking.

Every layer partitions its output units into slices: slice 0 is the base
network and each later slice is a block of units added when the number
of UAVs grows. In a *progressive* (hidden) layer, units of slice ``s``
read input slices ``0..s`` only, so older units never see newer ones and
keep computing exactly what they computed before an expansion. A
non-progressive layer (a head's output layer) reads every active input
slice.

A forward pass multiplies only the visible, active blocks. Masking a
slice therefore reproduces the smaller network bit for bit: the same
matrix products with the same shapes are evaluated.

All math is float64.
"""
from __future__ import annotations

import copy
import io
import json
import zipfile
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .errors import CheckpointError, ConfigError, ShapeError

ACTIVATIONS = ("relu", "sigmoid", "softmax", "linear")
CHECKPOINT_VERSION = 1
LOG_FLOOR = 1e-12


def _act(name: str, z: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    if name == "relu":
        y = np.maximum(z, 0.0)
    elif name == "linear":
        y = z.copy()
    elif name == "sigmoid":
        y = np.empty_like(z)
        pos = z >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        y[~pos] = ez / (1.0 + ez)
    elif name == "softmax":
        zz = z if mask is None else np.where(mask, z, -np.inf)
        zz = zz - zz.max(axis=1, keepdims=True)
        e = np.exp(zz)
        y = e / e.sum(axis=1, keepdims=True)
    else:
        raise ConfigError(f"unknown activation {name!r}")
    if mask is not None:
        y = np.where(mask, y, 0.0)
    return y


def _act_backward(name: str, y: np.ndarray, z: np.ndarray, dy: np.ndarray) -> np.ndarray:
    if name == "relu":
        return dy * (z > 0)
    if name == "linear":
        return dy
    if name == "sigmoid":
        return dy * y * (1.0 - y)
    if name == "softmax":
        return y * (dy - np.sum(dy * y, axis=1, keepdims=True))
    raise ConfigError(f"unknown activation {name!r}")


class DenseLayer:
    """One fully connected layer whose units are split into slices.

    ``slice_bounds`` are the output-unit offsets of the slices and
    ``input_bounds`` the offsets of the input slices (the previous
    layer's slices, or a single slice for the raw input). ``active`` and
    ``input_active`` flag which slices take part in the computation.
    ``unit_mask`` optionally switches off individual output units (used
    to hide the classes of absent UAVs).
    """

    def __init__(
        self,
        weights,
        biases,
        activation="relu",
        slice_bounds=None,
        input_bounds=None,
        progressive=True,
        unit_mask=None,
        max_slices=None,
    ):
        self.weights = np.array(weights, dtype=float)
        self.biases = np.array(biases, dtype=float)
        out_dim, in_dim = self.weights.shape
        if self.biases.shape != (out_dim,):
            raise ShapeError("bias length must match the number of output units")
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        self.activation = activation
        self.slice_bounds = list(slice_bounds or [0, out_dim])
        self.input_bounds = list(input_bounds or [0, in_dim])
        if self.slice_bounds[-1] != out_dim or self.input_bounds[-1] != in_dim:
            raise ShapeError("slice bounds do not cover the weight matrix")
        if any(b > a for a, b in zip(self.slice_bounds[1:], self.slice_bounds)):
            raise ShapeError("slice bounds must be non-decreasing")
        self.progressive = progressive
        self.active = [True] * (len(self.slice_bounds) - 1)
        self.input_active = [True] * (len(self.input_bounds) - 1)
        self.unit_mask = None if unit_mask is None else np.asarray(unit_mask, bool)
        self.max_slices = max_slices
        self.trainable_w = np.ones(self.weights.shape, bool)
        self.trainable_b = np.ones(self.biases.shape, bool)
        # integer stage tag per parameter, used by the progressive scheduler
        self.owner_w = np.zeros(self.weights.shape, np.int64)
        self.owner_b = np.zeros(self.biases.shape, np.int64)

    # -- structure ---------------------------------------------------------

    @property
    def n_slices(self) -> int:
        return len(self.slice_bounds) - 1

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    def visible_inputs(self, s: int) -> np.ndarray:
        """Input column indices read by output slice ``s``."""
        parts = [
            np.arange(self.input_bounds[t], self.input_bounds[t + 1])
            for t in range(len(self.input_bounds) - 1)
            if self.input_active[t] and (not self.progressive or t <= s)
        ]
        return np.concatenate(parts) if parts else np.zeros(0, np.int64)

    def blocks(self):
        """``(row_start, row_stop, cols)`` for every active output slice."""
        out = []
        for s in range(self.n_slices):
            if self.active[s]:
                out.append((self.slice_bounds[s], self.slice_bounds[s + 1], self.visible_inputs(s)))
        return out

    def row_active(self) -> np.ndarray:
        mask = np.zeros(self.out_dim, bool)
        for r0, r1, _ in self.blocks():
            mask[r0:r1] = True
        if self.unit_mask is not None:
            mask &= self.unit_mask
        return mask

    def expand(self, extra_units: int, rng=None, scale: float = 0.1, owner: int = 0) -> None:
        """Append a slice of ``extra_units`` output units.

        New units read every active input slice. Their weights are drawn
        He-uniform and multiplied by ``scale`` (``scale=0`` gives zeros).
        """
        if extra_units < 1:
            raise ConfigError("extra_units must be >= 1")
        if self.max_slices is not None and self.n_slices >= self.max_slices:
            raise ConfigError(f"layer already holds the maximum of {self.max_slices} slices")
        rng = rng if rng is not None else np.random.default_rng(0)
        s = self.n_slices
        self.slice_bounds.append(self.slice_bounds[-1] + extra_units)
        self.active.append(True)
        cols = self.visible_inputs(s)
        limit = scale * np.sqrt(6.0 / max(len(cols), 1))
        new_w = np.zeros((extra_units, self.in_dim))
        if len(cols):
            new_w[:, cols] = rng.uniform(-limit, limit, (extra_units, len(cols)))
        self.weights = np.vstack([self.weights, new_w])
        self.biases = np.concatenate([self.biases, np.zeros(extra_units)])
        self.trainable_w = np.vstack([self.trainable_w, np.ones(new_w.shape, bool)])
        self.trainable_b = np.concatenate([self.trainable_b, np.ones(extra_units, bool)])
        self.owner_w = np.vstack([self.owner_w, np.full(new_w.shape, owner, np.int64)])
        self.owner_b = np.concatenate([self.owner_b, np.full(extra_units, owner, np.int64)])
        if self.unit_mask is not None:
            self.unit_mask = np.concatenate([self.unit_mask, np.ones(extra_units, bool)])

    def extend_inputs(self, extra: int, rng=None, scale: float = 0.1, owner: int = 0) -> None:
        """Append an input slice of width ``extra`` (the previous layer grew).

        Only rows that can see the new slice get initialized weights; in a
        progressive layer those rows do not exist yet, so the block is zero.
        """
        rng = rng if rng is not None else np.random.default_rng(0)
        t = len(self.input_bounds) - 1
        self.input_bounds.append(self.input_bounds[-1] + extra)
        self.input_active.append(True)
        new_w = np.zeros((self.out_dim, extra))
        if not self.progressive:
            limit = scale * np.sqrt(6.0 / max(self.in_dim + extra, 1))
            new_w = rng.uniform(-limit, limit, new_w.shape)
        else:
            for s in range(self.n_slices):
                if s >= t:
                    r0, r1 = self.slice_bounds[s], self.slice_bounds[s + 1]
                    limit = scale * np.sqrt(6.0 / max(self.in_dim + extra, 1))
                    new_w[r0:r1] = rng.uniform(-limit, limit, (r1 - r0, extra))
        own = np.full(new_w.shape, owner, np.int64)
        self.owner_w = np.hstack([self.owner_w, np.maximum(own, self.owner_b[:, None])])
        self.weights = np.hstack([self.weights, new_w])
        self.trainable_w = np.hstack([self.trainable_w, np.ones(new_w.shape, bool)])

    def mask(self, s: int) -> None:
        if s == 0:
            raise ConfigError("the base slice cannot be masked")
        if not 0 < s < self.n_slices:
            raise ConfigError(f"no slice {s}")
        self.active[s] = False

    def unmask(self, s: int) -> None:
        if not 0 <= s < self.n_slices:
            raise ConfigError(f"no slice {s}")
        self.active[s] = True

    # -- computation --------------------------------------------------------

    def forward(self, x: np.ndarray):
        """Return ``(z, y)``: pre-activations and outputs, zero on inactive units."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"expected input of width {self.in_dim}, got {x.shape}")
        z = np.zeros((x.shape[0], self.out_dim))
        for r0, r1, cols in self.blocks():
            xs = np.ascontiguousarray(x[:, cols])
            ws = np.ascontiguousarray(self.weights[r0:r1][:, cols])
            z[:, r0:r1] = xs @ ws.T + self.biases[r0:r1]
        live = self.row_active()
        y = _act(self.activation, z, live[None, :])
        return z, y

    def backward(self, x: np.ndarray, z: np.ndarray, y: np.ndarray, dy: np.ndarray):
        """Gradients w.r.t. weights, biases and the layer input."""
        live = self.row_active()
        dz = np.where(live[None, :], _act_backward(self.activation, y, z, dy), 0.0)
        dw = np.zeros_like(self.weights)
        db = np.zeros_like(self.biases)
        dx = np.zeros_like(x)
        for r0, r1, cols in self.blocks():
            d = dz[:, r0:r1]
            dw[r0:r1, cols] = d.T @ x[:, cols]
            db[r0:r1] = d.sum(axis=0)
            dx[:, cols] += d @ self.weights[r0:r1][:, cols]
        return dw, db, dx


def forward_dense(layer: DenseLayer, x) -> np.ndarray:
    x = np.asarray(x, float)
    single = x.ndim == 1
    _, y = layer.forward(x[None, :] if single else x)
    return y[0] if single else y


def expand_layer(layer: DenseLayer, extra_units: int, rng=None, scale: float = 0.1) -> DenseLayer:
    out = copy.deepcopy(layer)
    out.expand(extra_units, rng=rng, scale=scale)
    return out


def mask_slice(layer: DenseLayer, slice_index: int) -> DenseLayer:
    out = copy.deepcopy(layer)
    out.mask(slice_index)
    return out


def unmask_slice(layer: DenseLayer, slice_index: int) -> DenseLayer:
    out = copy.deepcopy(layer)
    out.unmask(slice_index)
    return out


def he_layer(in_dim, out_dim, activation, rng, progressive=True, scale=1.0) -> DenseLayer:
    limit = scale * np.sqrt(6.0 / in_dim)
    return DenseLayer(
        rng.uniform(-limit, limit, (out_dim, in_dim)),
        np.zeros(out_dim),
        activation,
        progressive=progressive,
    )


# -- network ----------------------------------------------------------------


class Network:
    """Shared trunk followed by one or more heads.

    ``heads`` maps a head name to its layer list; the last layer of every
    head is its output layer.
    """

    def __init__(self, shared: List[DenseLayer], heads: Dict[str, List[DenseLayer]]):
        self.shared = list(shared)
        self.heads = {k: list(v) for k, v in heads.items()}
        self._cache = None

    @property
    def input_dim(self) -> int:
        return self.shared[0].in_dim if self.shared else next(iter(self.heads.values()))[0].in_dim

    def named_layers(self):
        for q, layer in enumerate(self.shared):
            yield f"shared.{q}", layer
        for name, layers in self.heads.items():
            for p, layer in enumerate(layers):
                yield f"{name}.{p}", layer

    def parameters(self):
        """``(key, layer, attribute)`` for every parameter array."""
        for lname, layer in self.named_layers():
            yield f"{lname}.w", layer, "weights"
            yield f"{lname}.b", layer, "biases"

    def chains(self):
        """Pairs of (layer, next layers that read it)."""
        pairs = []
        for q in range(len(self.shared) - 1):
            pairs.append((self.shared[q], [self.shared[q + 1]]))
        if self.shared:
            pairs.append((self.shared[-1], [layers[0] for layers in self.heads.values()]))
        for layers in self.heads.values():
            for p in range(len(layers) - 1):
                pairs.append((layers[p], [layers[p + 1]]))
        return pairs

    def forward(self, x, keep_cache: bool = True) -> Dict[str, np.ndarray]:
        x = np.asarray(x, float)
        if x.ndim == 1:
            x = x[None, :]
        trace = []
        h = x
        for layer in self.shared:
            z, y = layer.forward(h)
            trace.append((layer, h, z, y))
            h = y
        outs = {}
        head_traces = {}
        for name, layers in self.heads.items():
            g = h
            ht = []
            for layer in layers:
                z, y = layer.forward(g)
                ht.append((layer, g, z, y))
                g = y
            outs[name] = g
            head_traces[name] = ht
        if keep_cache:
            self._cache = (trace, head_traces)
        return outs

    def backward(self, grad_out: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        """Analytic gradients from output gradients of the last forward pass.

        Shared layers accumulate the contributions of every head.
        """
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        trace, head_traces = self._cache
        grads = {}
        keys = {id(layer): lname for lname, layer in self.named_layers()}
        d_trunk = None
        for name, ht in head_traces.items():
            dy = grad_out.get(name)
            if dy is None:
                dy = np.zeros_like(ht[-1][3])
            for layer, x, z, y in reversed(ht):
                dw, db, dx = layer.backward(x, z, y, dy)
                grads[keys[id(layer)] + ".w"] = dw
                grads[keys[id(layer)] + ".b"] = db
                dy = dx
            d_trunk = dy if d_trunk is None else d_trunk + dy
        dy = d_trunk
        for layer, x, z, y in reversed(trace):
            dw, db, dx = layer.backward(x, z, y, dy)
            grads[keys[id(layer)] + ".w"] = dw
            grads[keys[id(layer)] + ".b"] = db
            dy = dx
        return grads

    # -- growth -------------------------------------------------------------

    def progressive_layers(self):
        return [layer for _, layer in self.named_layers() if layer.progressive]

    def expand(self, extra_units: int, rng=None, scale: float = 0.1, owner: int = 0) -> None:
        """Grow every progressive layer by one slice of ``extra_units``."""
        rng = rng if rng is not None else np.random.default_rng(0)
        grown = set()
        readers = dict((id(a), b) for a, b in self.chains())
        for lname, layer in self.named_layers():
            if layer.progressive:
                layer.expand(extra_units, rng=rng, scale=scale, owner=owner)
                grown.add(id(layer))
                for nxt in readers.get(id(layer), []):
                    nxt.extend_inputs(extra_units, rng=rng, scale=scale, owner=owner)

    def set_slice_active(self, s: int, active: bool) -> None:
        readers = dict((id(a), b) for a, b in self.chains())
        for _, layer in self.named_layers():
            if layer.progressive and s < layer.n_slices:
                if active:
                    layer.unmask(s)
                else:
                    layer.mask(s)
                for nxt in readers.get(id(layer), []):
                    nxt.input_active[s] = active


# -- losses -----------------------------------------------------------------


def cross_entropy(probs, labels) -> float:
    """Mean negative log-likelihood of integer ``labels``; log floored at 1e-12."""
    p = np.asarray(probs, float)
    labels = np.asarray(labels, int)
    s = len(labels)
    picked = p[np.arange(s), labels]
    return float(-np.sum(np.log(np.maximum(picked, LOG_FLOOR))) / s)


def cross_entropy_grad(probs, labels) -> np.ndarray:
    p = np.asarray(probs, float)
    labels = np.asarray(labels, int)
    s = len(labels)
    g = np.zeros_like(p)
    picked = p[np.arange(s), labels]
    g[np.arange(s), labels] = np.where(picked > LOG_FLOOR, -1.0 / (s * np.maximum(picked, LOG_FLOOR)), 0.0)
    return g


def cross_entropy_per_sample(probs, labels) -> np.ndarray:
    p = np.asarray(probs, float)
    labels = np.asarray(labels, int)
    return -np.log(np.maximum(p[np.arange(len(labels)), labels], LOG_FLOOR))


def mse(pred, target, weights=None) -> float:
    """``(1/S) * sum((pred - target)^2)``; rows are samples."""
    pred = np.asarray(pred, float)
    target = np.asarray(target, float)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    err = (pred - target) ** 2
    if weights is not None:
        err = err * weights
    return float(np.sum(err) / len(pred))


def mse_grad(pred, target, weights=None) -> np.ndarray:
    pred = np.asarray(pred, float)
    g = 2.0 * (pred - np.asarray(target, float)) / len(pred)
    return g if weights is None else g * weights


def multitask_loss(l_ce: float, l_mse: float, xi: float) -> float:
    return l_ce + xi * l_mse


# -- optimizer --------------------------------------------------------------


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def _fit(arr: Optional[np.ndarray], shape) -> np.ndarray:
    """Zero-pad a moment buffer after its parameter grew."""
    if arr is None:
        return np.zeros(shape)
    if arr.shape == shape:
        return arr
    return np.pad(arr, [(0, n - o) for n, o in zip(shape, arr.shape)])


def optimizer_step(network: Network, grads: Dict[str, np.ndarray], state: OptimizerState) -> None:
    """Adaptive-moment update; entries flagged non-trainable stay untouched."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for key, layer, attr in network.parameters():
        g = grads.get(key)
        if g is None:
            continue
        param = getattr(layer, attr)
        train = layer.trainable_w if attr == "weights" else layer.trainable_b
        m = _fit(state.m.get(key), param.shape)
        v = _fit(state.v.get(key), param.shape)
        m = np.where(train, state.beta1 * m + (1 - state.beta1) * g, m)
        v = np.where(train, state.beta2 * v + (1 - state.beta2) * g * g, v)
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        setattr(layer, attr, np.where(train, param - update, param))
        state.m[key] = m
        state.v[key] = v


# -- gradient check ---------------------------------------------------------


def gradient_check(
    network: Network,
    x: np.ndarray,
    loss_fn: Callable[[Dict[str, np.ndarray]], tuple],
    h: float = 1e-6,
    corrupt: bool = False,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn(outputs)`` returns ``(loss, grad_out)``. Per parameter array
    the error is ``||a - n|| / max(||a|| + ||n||, 1e-12)`` over the entries
    that are live (visible and active); the maximum over arrays is returned.
    ``corrupt=True`` perturbs the analytic gradient (negative control).
    """
    outs = network.forward(x)
    _, gout = loss_fn(outs)
    grads = network.backward(gout)
    worst = 0.0
    for key, layer, attr in network.parameters():
        param = getattr(layer, attr)
        live = _live_entries(layer, attr)
        a = grads[key]
        if corrupt:
            a = a * 1.01 + 1e-3 * live
        num = np.zeros_like(param)
        for idx in zip(*np.nonzero(live)):
            old = param[idx]
            param[idx] = old + h
            lp, _ = loss_fn(network.forward(x, keep_cache=False))
            param[idx] = old - h
            lm, _ = loss_fn(network.forward(x, keep_cache=False))
            param[idx] = old
            num[idx] = (lp - lm) / (2 * h)
        a = np.where(live, a, 0.0)
        denom = max(np.linalg.norm(a) + np.linalg.norm(num), 1e-12)
        worst = max(worst, float(np.linalg.norm(a - num) / denom))
    return worst


def _live_entries(layer: DenseLayer, attr: str) -> np.ndarray:
    rows = layer.row_active()
    if attr == "biases":
        return rows.copy()
    live = np.zeros(layer.weights.shape, bool)
    for r0, r1, cols in layer.blocks():
        live[np.ix_(np.arange(r0, r1), cols)] = True
    return live & rows[:, None]


# -- checkpoints ------------------------------------------------------------

_LAYER_ARRAYS = ("weights", "biases", "trainable_w", "trainable_b", "owner_w", "owner_b")


def save_params(network: Network, state: Optional[OptimizerState] = None, extra: Optional[dict] = None) -> bytes:
    """Serialize a network (and optionally optimizer state) to npz bytes."""
    arrays = {}
    layers_meta = []
    for lname, layer in network.named_layers():
        for a in _LAYER_ARRAYS:
            arrays[f"{lname}/{a}"] = getattr(layer, a)
        if layer.unit_mask is not None:
            arrays[f"{lname}/unit_mask"] = layer.unit_mask
        layers_meta.append(
            {
                "name": lname,
                "activation": layer.activation,
                "slice_bounds": layer.slice_bounds,
                "input_bounds": layer.input_bounds,
                "progressive": layer.progressive,
                "active": layer.active,
                "input_active": layer.input_active,
                "max_slices": layer.max_slices,
                "has_unit_mask": layer.unit_mask is not None,
            }
        )
    meta = {
        "format": "fres.checkpoint",
        "version": CHECKPOINT_VERSION,
        "shared": len(network.shared),
        "heads": {k: len(v) for k, v in network.heads.items()},
        "layers": layers_meta,
        "extra": extra or {},
    }
    if state is not None:
        meta["optimizer"] = {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps, "step": state.step}
        for k, v in state.m.items():
            arrays[f"opt_m/{k}"] = v
        for k, v in state.v.items():
            arrays[f"opt_v/{k}"] = v
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


def load_params(payload: bytes):
    """Inverse of :func:`save_params`; returns ``(network, state, extra)``."""
    try:
        with np.load(io.BytesIO(payload), allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
        meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    except (zipfile.BadZipFile, ValueError, KeyError, EOFError, OSError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint payload: {exc}") from exc
    if meta.get("format") != "fres.checkpoint":
        raise CheckpointError("not a checkpoint payload")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
    try:
        built = {}
        for lm in meta["layers"]:
            n = lm["name"]
            layer = DenseLayer(
                arrays[f"{n}/weights"],
                arrays[f"{n}/biases"],
                lm["activation"],
                lm["slice_bounds"],
                lm["input_bounds"],
                lm["progressive"],
                arrays[f"{n}/unit_mask"] if lm["has_unit_mask"] else None,
                lm["max_slices"],
            )
            layer.active = list(lm["active"])
            layer.input_active = list(lm["input_active"])
            layer.trainable_w = arrays[f"{n}/trainable_w"].astype(bool)
            layer.trainable_b = arrays[f"{n}/trainable_b"].astype(bool)
            layer.owner_w = arrays[f"{n}/owner_w"].astype(np.int64)
            layer.owner_b = arrays[f"{n}/owner_b"].astype(np.int64)
            built[n] = layer
        shared = [built[f"shared.{q}"] for q in range(meta["shared"])]
        heads = {h: [built[f"{h}.{p}"] for p in range(k)] for h, k in meta["heads"].items()}
        state = None
        if "optimizer" in meta:
            o = meta["optimizer"]
            state = OptimizerState(o["lr"], o["beta1"], o["beta2"], o["eps"], o["step"])
            for k, v in arrays.items():
                if k.startswith("opt_m/"):
                    state.m[k[6:]] = v
                elif k.startswith("opt_v/"):
                    state.v[k[6:]] = v
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint payload: {exc}") from exc
    return Network(shared, heads), state, meta.get("extra", {})
