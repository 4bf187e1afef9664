"""UAV placement by path-loss-weighted fuzzy c-means (LS-FCM).

Classical fuzzy c-means with the squared Euclidean dissimilarity replaced
by the large-scale path-loss metric ``d ** pathloss_exponent``. With the
default exponent of 2 this is plain FCM.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError


def _pairwise(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2)


def memberships(dist: np.ndarray, pathloss_exponent: float, fuzzifier: float) -> np.ndarray:
    """FCM membership matrix for a given ``(N, M)`` distance table.

    A point that coincides with one or more centers is shared equally
    among them; its other memberships are zero.
    """
    n, m = dist.shape
    u = np.zeros((n, m))
    zero = dist <= 0.0
    hit = zero.any(axis=1)
    if hit.any():
        u[hit] = zero[hit] / zero[hit].sum(axis=1, keepdims=True)
    rest = ~hit
    if rest.any():
        # u_ij = D_ij^(-1/(q-1)) / sum_k D_ik^(-1/(q-1)) with D = d^alpha
        power = -pathloss_exponent / (fuzzifier - 1.0)
        logw = power * np.log(dist[rest])
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        u[rest] = w / w.sum(axis=1, keepdims=True)
    return u


def objective(points, centers, u, pathloss_exponent=2.0, fuzzifier=2.0) -> float:
    d = _pairwise(np.asarray(points, float), np.asarray(centers, float))
    return float(np.sum(u**fuzzifier * d**pathloss_exponent))


def _update_centers(points, centers, u, pathloss_exponent, fuzzifier):
    w = u**fuzzifier
    if pathloss_exponent != 2.0:
        # reweighted step for sum w * d^alpha; descends for 1 <= alpha <= 2
        d = _pairwise(points, centers)
        w = w * np.maximum(d, 1e-12) ** (pathloss_exponent - 2.0)
    tot = w.sum(axis=0)
    new = centers.copy()
    ok = tot > 0
    new[ok] = (w[:, ok].T @ points) / tot[ok, None]
    return new


def _spread_init(points: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ style seeding."""
    n = len(points)
    centers = [points[rng.integers(n)]]
    for _ in range(1, m):
        d2 = np.min(_pairwise(points, np.array(centers)) ** 2, axis=1)
        tot = d2.sum()
        if tot <= 0:
            centers.append(points[rng.integers(n)])
        else:
            centers.append(points[rng.choice(n, p=d2 / tot)])
    return np.array(centers, dtype=float)


def ls_fcm(
    ue_xy,
    m: int,
    fuzzifier: float = 2.0,
    pathloss_exponent: float = 2.0,
    max_iter: int = 100,
    tol: float = 1e-4,
    seed: int = 0,
    return_history: bool = False,
):
    """Cluster ground positions into ``m`` UAV hover points.

    Args:
        ue_xy: ``(N, 2)`` horizontal UE coordinates in meters.
        m: number of UAVs.
        fuzzifier: FCM exponent, must exceed 1.
        pathloss_exponent: exponent applied to distance in the dissimilarity.
        max_iter: iteration cap.
        tol: stop once no center moves farther than this (meters).
        seed: seeds the k-means++ style initialization.
        return_history: also return per-iteration ``(objective, memberships)``.

    Returns:
        ``(m, 2)`` array of centers, plus the history list if requested.
    """
    pts = np.asarray(ue_xy, dtype=float)
    if pts.ndim != 2:
        raise ConfigError("ue_xy must be a 2-D array")
    n = len(pts)
    if m < 1:
        raise ConfigError("need at least one UAV")
    if m > n:
        raise ConfigError(f"cannot form {m} clusters from {n} UEs")
    if fuzzifier <= 1.0:
        raise ConfigError("fuzzifier must be > 1")
    rng = np.random.default_rng(seed)
    # seed from a canonical ordering so relabeling UEs cannot change the result
    canonical = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    centers = _spread_init(canonical, m, rng)
    history = []
    for _ in range(max_iter):
        u = memberships(_pairwise(pts, centers), pathloss_exponent, fuzzifier)
        if return_history:
            history.append((objective(pts, centers, u, pathloss_exponent, fuzzifier), u))
        new = _update_centers(pts, centers, u, pathloss_exponent, fuzzifier)
        shift = np.max(np.linalg.norm(new - centers, axis=1))
        centers = new
        if shift < tol:
            break
    if return_history:
        u = memberships(_pairwise(pts, centers), pathloss_exponent, fuzzifier)
        history.append((objective(pts, centers, u, pathloss_exponent, fuzzifier), u))
        return centers, history
    return centers
