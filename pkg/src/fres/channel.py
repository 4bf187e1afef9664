"""Cascaded UE -> IRS -> UAV channels and quantized passive beamforming.

Each UE reaches each UAV through exactly one IRS. The per-element phase
of the cascaded link is the sum of the UE->IRS and IRS->UAV steering
phases; QPB picks, for every element, the phase level from
``{2*pi*i/N_p}`` closest (circularly) to the compensating phase so the
reflected paths add up coherently.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .env import PhysicalConstants, Scenario
from .errors import DegenerateGeometryError, ShapeError

TWO_PI = 2.0 * np.pi


@dataclass
class SteeringVector:
    amplitude: float
    phases: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return self.amplitude * np.exp(1j * self.phases)


@dataclass
class PhaseMatrix:
    thetas: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(np.exp(1j * self.thetas))


@dataclass
class ChannelSet:
    """Per (UE, active UAV) link description; UAV axis is ``j - 1``."""

    irs_index: np.ndarray  # (N, m) chosen IRS
    thetas: np.ndarray  # (N, m, K) QPB phase per element
    gains: np.ndarray  # (N, m) effective power gain
    rates: np.ndarray  # (N, m) bit/s

    @property
    def n_uavs(self) -> int:
        return self.gains.shape[1]

    def gain_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(self.gains)

    def to_dict(self) -> dict:
        return {
            "schema": "fres.channels/1",
            "pairs": [
                {
                    "ue": i,
                    "uav": j + 1,
                    "irs": int(self.irs_index[i, j]),
                    "gain_db": float(self.gain_db()[i, j]),
                    "rate_bps": float(self.rates[i, j]),
                    "phases_rad": [float(t) for t in self.thetas[i, j]],
                }
                for i in range(self.gains.shape[0])
                for j in range(self.gains.shape[1])
            ],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _link_geometry(p, q):
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    d = float(np.linalg.norm(p - q))
    if d == 0.0:
        raise DegenerateGeometryError(f"coincident points {p} and {q}")
    return d, abs(p[0] - q[0]) / d


def _array_phases(cos_angle, c: PhysicalConstants) -> np.ndarray:
    k = np.arange(c.elements_per_irs)
    return -(TWO_PI / c.carrier_wavelength_m) * c.element_spacing_m * np.multiply.outer(cos_angle, k)


def ue_irs_channel(ue, irs, c: PhysicalConstants) -> SteeringVector:
    d, phi = _link_geometry(ue, irs)
    return SteeringVector(np.sqrt(c.epsilon_ref_loss / d**c.alpha_ue_irs), _array_phases(phi, c))


def irs_uav_channel(irs, uav, c: PhysicalConstants) -> SteeringVector:
    d, phi = _link_geometry(irs, uav)
    return SteeringVector(np.sqrt(c.epsilon_ref_loss / d**2), _array_phases(phi, c))


def cascaded_gain(h_ur: SteeringVector, theta: PhaseMatrix, h_rv: SteeringVector) -> float:
    k = len(h_ur.phases)
    if len(theta.thetas) != k or len(h_rv.phases) != k:
        raise ShapeError("steering vectors and phase matrix disagree on K")
    s = np.sum(np.exp(1j * (h_ur.phases + theta.thetas + h_rv.phases)))
    return float((h_ur.amplitude * h_rv.amplitude) ** 2 * abs(s) ** 2)


def quantize_phase(target, n_p: int) -> np.ndarray:
    """Nearest level of ``{2*pi*i/n_p}`` by circular distance.

    Exact ties go to the smaller angle.
    """
    t = np.mod(np.asarray(target, float), TWO_PI)
    q = t * (n_p / TWO_PI)
    lo = np.floor(q)
    frac = q - lo
    up = np.mod(lo + 1, n_p)
    # on an exact tie take the smaller of the two level angles
    idx = np.where(frac < 0.5, lo, np.where(frac > 0.5, up, np.minimum(lo, up)))
    return TWO_PI * np.mod(idx, n_p) / n_p


def _coherence(cascade: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    return np.abs(np.sum(np.exp(1j * (cascade + thetas)), axis=-1)) ** 2


def qpb_thetas(cascade: np.ndarray, n_p: int, search_reference: bool = True) -> np.ndarray:
    """QPB phases for cascaded element phases ``cascade`` of shape ``(..., K)``.

    With ``search_reference=False`` every element is quantized toward a
    zero-phase resultant. With the default, the common resultant phase is
    also searched: the quantization pattern only changes at ``K * n_p``
    breakpoints on the circle, so trying one reference inside each arc
    (plus zero, which wins ties) yields the best pattern in ``Psi^K``.
    """
    cascade = np.asarray(cascade, float)
    target = np.mod(-cascade, TWO_PI)
    base = quantize_phase(target, n_p)
    if not search_reference or n_p == 1:
        return base
    step = TWO_PI / n_p
    k = cascade.shape[-1]
    mids = (np.arange(n_p) + 0.5) * step
    brk = np.mod(mids[None, :] - target[..., :, None], TWO_PI).reshape(*cascade.shape[:-1], k * n_p)
    brk = np.sort(brk, axis=-1)
    nxt = np.concatenate([brk[..., 1:], brk[..., :1] + TWO_PI], axis=-1)
    refs = 0.5 * (brk + nxt)
    cand = quantize_phase(target[..., None, :] + refs[..., :, None], n_p)  # (..., C, K)
    score = _coherence(cascade[..., None, :], cand)
    best = np.argmax(score, axis=-1)
    best_theta = np.take_along_axis(cand, best[..., None, None], axis=-2)[..., 0, :]
    best_score = np.take_along_axis(score, best[..., None], axis=-1)[..., 0]
    base_score = _coherence(cascade, base)
    better = best_score > base_score * (1.0 + 1e-12)
    return np.where(better[..., None], best_theta, base)


def qpb_phase(h_ur: SteeringVector, h_rv: SteeringVector, n_p: int, search_reference: bool = True) -> PhaseMatrix:
    if n_p < 1:
        raise ValueError("n_p must be >= 1")
    if len(h_ur.phases) != len(h_rv.phases):
        raise ShapeError("steering vectors disagree on K")
    return PhaseMatrix(qpb_thetas(h_ur.phases + h_rv.phases, n_p, search_reference))


def _ideal_gains(ue_pos, irs_pos, uav_pos, c: PhysicalConstants) -> np.ndarray:
    """``(N, L, M)`` coherent upper bound ``K^2 * eps/d_ur^a * eps/d_rv^2``."""
    d_ur = np.linalg.norm(ue_pos[:, None, :] - irs_pos[None, :, :], axis=2)
    d_rv = np.linalg.norm(irs_pos[:, None, :] - uav_pos[None, :, :], axis=2)
    if np.any(d_ur == 0) or np.any(d_rv == 0):
        raise DegenerateGeometryError("an IRS coincides with a UE or a UAV")
    k2 = float(c.elements_per_irs) ** 2
    return k2 * (c.epsilon_ref_loss / d_ur**c.alpha_ue_irs)[:, :, None] * (c.epsilon_ref_loss / d_rv**2)[None, :, :]


def select_irs(ue, uav, irss, c: PhysicalConstants) -> int:
    g = _ideal_gains(np.asarray(ue, float)[None], np.asarray(irss, float).reshape(-1, 3), np.asarray(uav, float)[None], c)
    return int(np.argmax(g[0, :, 0]))


def data_rate(effective_gain, c: PhysicalConstants):
    return c.bandwidth_hz * np.log2(1.0 + c.tx_power_w * np.asarray(effective_gain, float) / c.noise_power_w)


def build_channel_set(scenario: Scenario, search_reference: bool = True) -> ChannelSet:
    """IRS choice, QPB phases, effective gains and rates for every
    (UE, active UAV) pair."""
    c = scenario.constants
    ue, irs, uav = scenario.ue_positions, scenario.irs_positions, scenario.uav_positions
    ideal = _ideal_gains(ue, irs, uav, c)
    choice = np.argmax(ideal, axis=1)  # (N, M), first index on ties
    sel = irs[choice]  # (N, M, 3)
    d_ur = np.linalg.norm(ue[:, None, :] - sel, axis=2)
    d_rv = np.linalg.norm(sel - uav[None, :, :], axis=2)
    phi_ur = np.abs(ue[:, None, 0] - sel[..., 0]) / d_ur
    phi_rv = np.abs(sel[..., 0] - uav[None, :, 0]) / d_rv
    cascade = _array_phases(phi_ur, c) + _array_phases(phi_rv, c)
    thetas = qpb_thetas(cascade, int(c.phase_levels), search_reference)
    amp2 = (c.epsilon_ref_loss / d_ur**c.alpha_ue_irs) * (c.epsilon_ref_loss / d_rv**2)
    gains = amp2 * _coherence(cascade, thetas)
    return ChannelSet(choice, thetas, gains, data_rate(gains, c))


def apply_fading(channels: ChannelSet, rng: np.random.Generator, c: PhysicalConstants) -> ChannelSet:
    """Rayleigh small-scale fading: power gains scaled by unit-mean exponential draws."""
    g = channels.gains * rng.exponential(1.0, channels.gains.shape)
    return ChannelSet(channels.irs_index, channels.thetas, g, data_rate(g, c))
